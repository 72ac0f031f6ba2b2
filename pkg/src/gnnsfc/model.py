"""Graph encoder / neighbour-masked decoder for SFC path generation.

Three variants share the decoding protocol:

``gg-dnn``
    gated graph encoder, feed-forward decoder applied to every neighbour;
``gg-rnn``
    gated graph encoder, GRU decoder whose recurrent state follows the
    selected node from step to step;
``dnn``
    baseline without a graph encoder. It sees the flattened annotation and
    adjacency matrices and therefore only fits the node count it was built for.

Decoding starts with a step whose only candidate is the source (so a VNF can be
processed there), then moves to a neighbour per step. For every candidate
``u`` the network emits ``(o_node, o_proc, o_not)``; the node distribution is a
softmax of ``o_node`` over the candidates and ``p(proc|u)`` is a two-way
softmax of ``(o_proc, o_not)``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .features import annotation_width, build_adjacency, build_annotation
from .nn import GruCell, ParameterStore, gru_step, mlp, positional_encoding
from .topology import (MAX_PATH_LEN, InvalidPath, Request, ResourceLedger, SfcPath, Status,
                       Topology, classify_path)

VARIANTS = ("dnn", "gg-dnn", "gg-rnn")


class IncompatibleTopology(ValueError):
    """The model cannot run on this topology (baseline size binding, VNF catalogue)."""


@dataclass
class ModelConfig:
    variant: str = "gg-rnn"
    num_vnf_types: int = 5
    steps: int = 5                  # encoder propagation steps T
    d_state: int = 128
    d_annotation: int = 128
    d_vnf: int = 32
    d_node: int = 4
    hidden: int = 256
    layers: int = 4
    dropout: float = 0.1
    max_path_len: int = MAX_PATH_LEN
    num_nodes: int | None = None    # baseline only
    vnf_order_hash: str = ""

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.steps < 1:
            raise ValueError("encoder needs at least one propagation step")
        if self.d_annotation > self.d_state:
            raise ValueError("annotation embedding cannot exceed the state size")
        if self.max_path_len < 1:
            raise ValueError("max_path_len must be positive")
        if self.d_node % 2:
            raise ValueError("positional encoding size must be even")
        if self.variant == "dnn" and not self.num_nodes:
            raise ValueError("the baseline needs a fixed node count")

    @property
    def uses_graph(self) -> bool:
        return self.variant != "dnn"

    @property
    def context_size(self) -> int:
        return 2 * self.d_vnf + self.d_node


def vnf_order_hash(t: Topology) -> str:
    return hashlib.sha256(json.dumps(list(t.vnf_types)).encode()).hexdigest()[:12]


class TopologyView:
    """Topology-level arrays reused by every request on the same graph."""

    def __init__(self, t: Topology):
        self.topology = t
        self.adjacency = build_adjacency(t)
        n = t.num_nodes
        dmax = max(len(t.neighbors(u)) for u in range(n))
        self.nbr_idx = np.zeros((n, dmax), dtype=np.intp)
        self.nbr_w = np.zeros((n, dmax))
        for u in range(n):
            nb = t.neighbors(u)
            self.nbr_idx[u, :len(nb)] = nb
            # a_u = sum_v adj[v, u] h_v
            self.nbr_w[u, :len(nb)] = self.adjacency[nb, u]
        self.neighbors = [np.array(t.neighbors(u), dtype=np.intp) for u in range(n)]


@dataclass
class StepPlan:
    n_prev: int
    candidates: np.ndarray
    target: int          # position of the chosen node inside candidates
    process: bool
    stage: int


@dataclass
class StepOutput:
    candidates: np.ndarray
    scores: np.ndarray          # (k, 3): o_node, o_proc, o_not
    p_node: np.ndarray          # (|N|,) zero outside candidates
    p_proc: np.ndarray          # (k,)


@dataclass
class LossReport:
    loss: float
    node_ce: float
    proc_ce: float
    steps: int
    correct: int                # next-node argmax hits on moving steps
    moves: int


def plan_steps(view: TopologyView, r: Request, path: SfcPath) -> list[StepPlan]:
    """Teacher-forcing schedule for a label path."""
    t = view.topology
    steps = path.steps
    if not steps or steps[0][0] != r.source:
        raise InvalidPath("label path must start at the source")
    plans = []
    stage = 0
    prev = r.source
    for i, (node, proc) in enumerate(steps):
        if i == 0:
            cands = np.array([r.source], dtype=np.intp)
        else:
            cands = view.neighbors[prev]
            if not t.has_edge(prev, node):
                raise InvalidPath(f"label steps {prev}->{node} are not adjacent")
        if proc and (stage >= len(r.chain) or t.instance_id(node, r.chain[stage]) is None):
            raise InvalidPath(f"label processes an unavailable VNF at node {node}")
        pos = int(np.searchsorted(cands, node))
        plans.append(StepPlan(prev, cands, pos, bool(proc), stage))
        stage += int(proc)
        prev = node
    if stage != len(r.chain) or prev != r.destination:
        raise InvalidPath("label path does not complete the request")
    return plans


class SfcModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.store = ParameterStore(seed)
        self.rng = np.random.default_rng(seed + 1)
        self.training = False
        self.meta: dict = {}            # provenance stored with checkpoints
        self._views: dict[int, TopologyView] = {}
        s, c = self.store, cfg
        m1 = c.num_vnf_types + 1            # last row encodes an exhausted chain
        self.done_id = c.num_vnf_types
        self.vall_table = s.add("vnf.all", (m1, c.d_vnf), fan_in=c.d_vnf)
        self.vnow_table = s.add("vnf.now", (m1, c.d_vnf), fan_in=c.d_vnf)
        if c.uses_graph:
            self.ann_embed = s.add("enc.embed", (c.num_vnf_types + 2, c.d_annotation))
            self.enc_gru = GruCell.create(s, "enc.gru", c.d_state, c.d_state)
            d_in = c.d_state + c.context_size
        else:
            n = c.num_nodes
            d_in = n * (c.num_vnf_types + 2) + n * n + c.context_size
        self.input_size = d_in
        if c.variant == "gg-rnn":
            self.dec_gru = GruCell.create(s, "dec.gru", d_in, c.hidden)
            self.out = (s.add("dec.out.W", (c.hidden, 3)), s.add("dec.out.b", (3,), "zeros"))
        else:
            sizes = [d_in] + [c.hidden] * c.layers
            self.layers = [(s.add(f"dec.l{i}.W", (a, b)), s.add(f"dec.l{i}.b", (b,), "zeros"))
                           for i, (a, b) in enumerate(zip(sizes, sizes[1:]))]
            n_out = 3 if c.uses_graph else 3 * c.num_nodes
            self.layers.append((s.add(f"dec.l{c.layers}.W", (c.hidden, n_out)),
                                s.add(f"dec.l{c.layers}.b", (n_out,), "zeros")))

    # -- helpers --------------------------------------------------------
    def train(self, mode: bool = True) -> "SfcModel":
        self.training = mode
        return self

    def eval(self) -> "SfcModel":
        return self.train(False)

    def view(self, t: Topology) -> TopologyView:
        v = self._views.get(id(t))
        if v is None or v.topology is not t:
            self.check_compatible(t)
            v = self._views[id(t)] = TopologyView(t)
        return v

    def check_compatible(self, t: Topology) -> None:
        c = self.cfg
        if t.num_vnf_types != c.num_vnf_types:
            raise IncompatibleTopology(
                f"model knows {c.num_vnf_types} VNF types, topology has {t.num_vnf_types}")
        if c.vnf_order_hash and vnf_order_hash(t) != c.vnf_order_hash:
            raise IncompatibleTopology("VNF type ordering differs from the training topology")
        if not c.uses_graph and t.num_nodes != c.num_nodes:
            raise IncompatibleTopology(
                f"topology incompatible with baseline: built for {c.num_nodes} nodes, "
                f"got {t.num_nodes}")

    def _context_parts(self, chain, stages) -> tuple[Tensor, Tensor]:
        """V_all (mean of remaining types, or DONE) and V_now embeddings per stage."""
        k = len(chain)
        pool = np.zeros((len(stages), self.cfg.num_vnf_types + 1))
        now = np.empty(len(stages), dtype=np.intp)
        for i, s in enumerate(stages):
            if s < k:
                for vnf in chain[s:]:
                    pool[i, vnf] += 1.0 / (k - s)
                now[i] = chain[s]
            else:
                pool[i, self.done_id] = 1.0
                now[i] = self.done_id
        return ad.matmul(pool, self.vall_table), self.vnow_table[now]

    def _pe(self, nodes) -> np.ndarray:
        return np.stack([positional_encoding(int(n), self.cfg.d_node) for n in nodes])

    def _drop(self, x: Tensor) -> Tensor:
        return ad.dropout(x, self.cfg.dropout, self.training, self.rng)

    # -- encoder --------------------------------------------------------
    def encode(self, ann: np.ndarray, view: TopologyView) -> Tensor:
        """Final node states after ``steps`` gated propagation rounds, (|N|, d_state)."""
        c = self.cfg
        if ann.shape != (view.topology.num_nodes, c.num_vnf_types + 2):
            raise ValueError(f"annotation shape {ann.shape} does not fit the topology")
        h = ad.matmul(ann, self.ann_embed)
        if c.d_annotation < c.d_state:
            h = ad.concat([h, np.zeros((ann.shape[0], c.d_state - c.d_annotation))], axis=1)
        for _ in range(c.steps):
            a = ad.neighbor_sum(h, view.nbr_idx, view.nbr_w)
            h = gru_step(self.enc_gru, a, h)
        return h

    def _baseline_input(self, ann: np.ndarray, view: TopologyView) -> np.ndarray:
        return np.concatenate([ann.ravel(), view.adjacency.ravel()])

    def _memory(self, t: Topology, r: Request):
        view = self.view(t)
        ann = build_annotation(t, r)
        if self.cfg.uses_graph:
            return view, self.encode(ann, view)
        return view, self._baseline_input(ann, view)

    # -- batched scoring for feed-forward variants ----------------------
    def _score_rows(self, memory, plans: list[StepPlan], chain) -> tuple[Tensor, np.ndarray]:
        """Scores for every (step, candidate) pair, stacked; also the step id of each row."""
        stages = [p.stage for p in plans]
        vall, vnow = self._context_parts(chain, stages)
        ctx = ad.concat([vall, vnow, self._pe([p.n_prev for p in plans])], axis=1)
        seg = np.concatenate([np.full(len(p.candidates), i) for i, p in enumerate(plans)])
        cand = np.concatenate([p.candidates for p in plans])
        if self.cfg.uses_graph:
            x = ad.concat([memory[cand], ctx[seg]], axis=1)
            return mlp(x, self.layers, self.cfg.dropout, self.training, self.rng), seg
        flat = np.broadcast_to(memory, (len(plans), memory.size))
        x = ad.concat([flat, ctx], axis=1)
        out = mlp(x, self.layers, self.cfg.dropout, self.training, self.rng)
        out = ad.reshape(out, (len(plans), self.cfg.num_nodes, 3))
        return out[seg, cand], seg

    # -- loss -----------------------------------------------------------
    def teacher_forced_loss(self, t: Topology, r: Request, path: SfcPath) -> tuple[Tensor, LossReport]:
        """Summed node and processing cross-entropy along a label path."""
        view, memory = self._memory(t, r)
        plans = plan_steps(view, r, path)
        if self.cfg.variant == "gg-rnn":
            node_lp, proc_lp, correct = self._rnn_logprobs(memory, plans, r.chain)
        else:
            scores, seg = self._score_rows(memory, plans, r.chain)
            offsets = np.cumsum([0] + [len(p.candidates) for p in plans])
            rows = offsets[:-1] + np.array([p.target for p in plans])
            lsm = ad.segment_log_softmax(scores[:, 0], seg, len(plans))
            node_lp = lsm[rows]
            pair = ad.log_softmax(scores[rows, 1:3], axis=1)
            proc_lp = pair[np.arange(len(plans)), [0 if p.process else 1 for p in plans]]
            correct = 0
            for i, p in enumerate(plans[1:], start=1):
                o = scores.data[offsets[i]:offsets[i + 1], 0]
                correct += int(np.argmax(o) == p.target)
        node_ce = -ad.sum_(node_lp)
        proc_ce = -ad.sum_(proc_lp)
        loss = node_ce + proc_ce
        rep = LossReport(float(loss.data), float(node_ce.data), float(proc_ce.data),
                         len(plans), correct, len(plans) - 1)
        return loss, rep

    def _rnn_logprobs(self, memory: Tensor, plans: list[StepPlan], chain):
        vall, vnow = self._context_parts(chain, [p.stage for p in plans])
        pe = self._pe([p.n_prev for p in plans])
        state = Tensor(np.zeros(self.cfg.hidden))
        node_terms, proc_terms, correct = [], [], 0
        for i, p in enumerate(plans):
            k = len(p.candidates)
            ctx = ad.concat([vall[i], vnow[i], pe[i]])
            x = self._drop(ad.concat([memory[p.candidates], ad.repeat_rows(ctx, k)], axis=1))
            g = gru_step(self.dec_gru, x, ad.repeat_rows(state, k))
            o = ad.linear(g, *self.out)
            node_terms.append(ad.log_softmax(o[:, 0])[p.target])
            proc_terms.append(ad.log_softmax(o[p.target, 1:3])[0 if p.process else 1])
            if i > 0:
                correct += int(np.argmax(o.data[:, 0]) == p.target)
            state = g[p.target]
        return ad.concat([ad.reshape(x, (1,)) for x in node_terms]), \
            ad.concat([ad.reshape(x, (1,)) for x in proc_terms]), correct

    # -- inference ------------------------------------------------------
    def decode_step(self, memory, view: TopologyView, n_prev: int, chain, stage: int,
                    candidates=None, state: Tensor | None = None) -> tuple[StepOutput, Tensor | None]:
        """Score the neighbours of ``n_prev`` (or the given candidate list).

        Returns the step output and, for the GRU decoder, the candidate states.
        """
        cands = view.neighbors[n_prev] if candidates is None else np.asarray(candidates, np.intp)
        if len(cands) == 0:
            raise ValueError(f"node {n_prev} has no neighbours")
        plan = StepPlan(n_prev, cands, 0, False, stage)
        states = None
        if self.cfg.variant == "gg-rnn":
            vall, vnow = self._context_parts(chain, [stage])
            ctx = ad.concat([vall[0], vnow[0], self._pe([n_prev])[0]])
            k = len(cands)
            x = self._drop(ad.concat([memory[cands], ad.repeat_rows(ctx, k)], axis=1))
            if state is None:
                state = Tensor(np.zeros(self.cfg.hidden))
            states = gru_step(self.dec_gru, x, ad.repeat_rows(state, k))
            scores = ad.linear(states, *self.out).data
        else:
            scores = self._score_rows(memory, [plan], chain)[0].data
        n = view.topology.num_nodes
        mask = np.zeros(n, dtype=bool)
        mask[cands] = True
        full = np.zeros(n)
        full[cands] = scores[:, 0]
        p_node = ad.masked_softmax(full, mask).data
        p_proc = ad.softmax(Tensor(scores[:, 1:3]), axis=1).data[:, 0]
        return StepOutput(cands, scores, p_node, p_proc), states

    def generate_path(self, t: Topology, r: Request,
                      ledger: ResourceLedger | None = None) -> tuple[SfcPath, Status]:
        """Greedy decoding; returns the path and its classification under ``ledger``."""
        ledger = ledger if ledger is not None else ResourceLedger(t)
        was_training = self.training
        self.eval()
        try:
            with ad.no_grad():
                path = self._greedy(t, r, ledger)
        finally:
            self.train(was_training)
        return path, classify_path(t, r, path, ledger)

    def _greedy(self, t: Topology, r: Request, ledger: ResourceLedger) -> SfcPath:
        view, memory = self._memory(t, r)
        chain, k = r.chain, len(r.chain)
        steps: list[tuple[int, bool]] = []
        stage, node, state = 0, r.source, None
        candidates = [r.source]
        while len(steps) < self.cfg.max_path_len:
            out, states = self.decode_step(memory, view, node, chain, stage,
                                           candidates=candidates, state=state)
            pick = int(np.argmax(out.p_node[out.candidates]))   # ties -> lowest id
            nxt = int(out.candidates[pick])
            proc = False
            if stage < k and out.p_proc[pick] > 0.5:
                inst = t.instance_id(nxt, chain[stage])
                if inst is not None and ledger.instance_has(inst, r.bandwidth_demand):
                    proc = True
                    stage += 1
            steps.append((nxt, proc))
            if states is not None:
                state = states[pick]
            node, candidates = nxt, None
            if node == r.destination and stage == k:
                break
        return SfcPath(tuple(steps))

    # -- persistence ----------------------------------------------------
    def header(self) -> dict:
        return {"model": asdict(self.cfg), "seed": self.seed, "meta": self.meta}

    def save(self, path) -> None:
        from .io import atomic_write_text
        atomic_write_text(path, self.store.to_json(self.header()))

    @classmethod
    def from_checkpoint_text(cls, text: str) -> "SfcModel":
        header, arrays = ParameterStore.parse(text)
        model = cls(ModelConfig(**header["model"]), seed=header.get("seed", 0))
        model.store.load_arrays(arrays)
        model.meta = dict(header.get("meta", {}))
        return model

    @classmethod
    def load(cls, path) -> "SfcModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_checkpoint_text(fh.read())


def build_model(variant: str, t: Topology, seed: int = 0, **overrides) -> SfcModel:
    """Model sized for ``t``'s VNF catalogue (and node count, for the baseline)."""
    cfg = ModelConfig(variant=variant, num_vnf_types=t.num_vnf_types,
                      num_nodes=t.num_nodes if variant == "dnn" else None,
                      vnf_order_hash=vnf_order_hash(t), **overrides)
    return SfcModel(cfg, seed)


def baseline_forward(model: SfcModel, flat_input: np.ndarray, chain, stage: int,
                     n_prev: int, candidates) -> StepOutput:
    """Baseline scoring from an already-flattened topology vector."""
    c = model.cfg
    if c.uses_graph:
        raise ValueError("baseline_forward applies to the dnn variant only")
    expected = c.num_nodes * (c.num_vnf_types + 2) + c.num_nodes ** 2
    flat_input = np.asarray(flat_input, dtype=float)
    if flat_input.shape != (expected,):
        raise IncompatibleTopology(
            f"topology incompatible with baseline: input size {flat_input.size}, "
            f"expected {expected}")
    cands = np.asarray(candidates, dtype=np.intp)
    plan = StepPlan(n_prev, cands, 0, False, stage)
    with ad.no_grad():
        scores = model._score_rows(flat_input, [plan], chain)[0].data
    mask = np.zeros(c.num_nodes, dtype=bool)
    mask[cands] = True
    full = np.zeros(c.num_nodes)
    full[cands] = scores[:, 0]
    return StepOutput(cands, scores, ad.masked_softmax(full, mask).data,
                      ad.softmax(Tensor(scores[:, 1:3]), axis=1).data[:, 0])
