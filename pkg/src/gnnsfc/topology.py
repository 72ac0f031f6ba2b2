"""Network topology, requests, paths and resource accounting.

A topology is an undirected graph whose nodes are dense integer ids. Edges
carry a traversal delay and a bandwidth capacity; nodes may host VNF
instances, each with a processing delay and a capacity. A path for a request
is an ordered list of ``(node, process)`` steps where ``process`` marks the
visit at which the next VNF of the request's chain is applied.
"""
from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

MAX_PATH_LEN = 50


class TopologyError(ValueError):
    """Raised when a topology document is malformed or violates an invariant."""


class InvalidPath(ValueError):
    """Raised when a path is not structurally valid for a topology/chain."""


class InsufficientResources(RuntimeError):
    """Raised when a ledger cannot accommodate a request's path."""


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    delay_ms: float
    bandwidth: float

    @property
    def key(self) -> tuple[int, int]:
        return (min(self.u, self.v), max(self.u, self.v))


@dataclass(frozen=True)
class VnfInstance:
    host: int
    vnf_type: int
    proc_delay_ms: float
    capacity: float


class Topology:
    """Immutable, validated network graph.

    Build one with :func:`load_topology` or :meth:`Topology.from_dict`.
    """

    def __init__(self, num_nodes: int, edges: Sequence[Edge], instances: Sequence[VnfInstance],
                 vnf_types: Sequence[str]):
        self.num_nodes = int(num_nodes)
        self.edges = tuple(edges)
        self.instances = tuple(instances)
        self.vnf_types = tuple(vnf_types)
        self._validate()

        self._edge_index = {e.key: i for i, e in enumerate(self.edges)}
        nbrs: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for e in self.edges:
            nbrs[e.u].append(e.v)
            nbrs[e.v].append(e.u)
        self._neighbors = tuple(tuple(sorted(n)) for n in nbrs)
        self._instance_index = {(m.host, m.vnf_type): i for i, m in enumerate(self.instances)}
        hosted: list[set[int]] = [set() for _ in range(self.num_nodes)]
        for m in self.instances:
            hosted[m.host].add(m.vnf_type)
        self._hosted = tuple(frozenset(h) for h in hosted)

    def _validate(self) -> None:
        n = self.num_nodes
        if n < 1:
            raise TopologyError("topology needs at least one node")
        if len(set(self.vnf_types)) != len(self.vnf_types):
            raise TopologyError("duplicate VNF type names")
        seen = set()
        for e in self.edges:
            for x in (e.u, e.v):
                if not 0 <= x < n:
                    raise TopologyError(f"edge references undeclared node {x}")
            if e.u == e.v:
                raise TopologyError(f"self-loop at node {e.u}")
            if e.key in seen:
                raise TopologyError(f"duplicate edge {e.key}")
            seen.add(e.key)
            if not e.delay_ms > 0:
                raise TopologyError(f"edge {e.key} has non-positive delay")
            if not e.bandwidth > 0:
                raise TopologyError(f"edge {e.key} has non-positive bandwidth")
        slots = set()
        for m in self.instances:
            if not 0 <= m.host < n:
                raise TopologyError(f"instance on undeclared node {m.host}")
            if not 0 <= m.vnf_type < len(self.vnf_types):
                raise TopologyError(f"unknown VNF type id {m.vnf_type}")
            if (m.host, m.vnf_type) in slots:
                raise TopologyError(f"node {m.host} hosts VNF type {m.vnf_type} twice")
            slots.add((m.host, m.vnf_type))
            if not m.proc_delay_ms > 0:
                raise TopologyError("instance processing delay must be positive")
            if m.capacity < 0:
                raise TopologyError("instance capacity must be non-negative")
        # connectivity
        adj: dict[int, list[int]] = {i: [] for i in range(n)}
        for e in self.edges:
            adj[e.u].append(e.v)
            adj[e.v].append(e.u)
        stack, reached = [0], {0}
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in reached:
                    reached.add(v)
                    stack.append(v)
        if len(reached) != n:
            raise TopologyError(f"graph is disconnected ({n - len(reached)} unreachable nodes)")

    # -- queries ---------------------------------------------------------
    @property
    def nodes(self) -> range:
        return range(self.num_nodes)

    @property
    def num_vnf_types(self) -> int:
        return len(self.vnf_types)

    def neighbors(self, u: int) -> tuple[int, ...]:
        """Sorted adjacency of ``u``."""
        if not 0 <= u < self.num_nodes:
            raise KeyError(f"unknown node {u}")
        return self._neighbors[u]

    def edge_id(self, u: int, v: int) -> int:
        try:
            return self._edge_index[(min(u, v), max(u, v))]
        except KeyError:
            raise InvalidPath(f"nodes {u} and {v} are not adjacent") from None

    def has_edge(self, u: int, v: int) -> bool:
        return (min(u, v), max(u, v)) in self._edge_index

    def hosted_types(self, u: int) -> frozenset[int]:
        return self._hosted[u]

    def instance_id(self, node: int, vnf_type: int) -> int | None:
        return self._instance_index.get((node, vnf_type))

    def type_id(self, name: str) -> int:
        try:
            return self.vnf_types.index(name)
        except ValueError:
            raise TopologyError(f"unknown VNF type {name!r}") from None

    # -- (de)serialization ----------------------------------------------
    @classmethod
    def from_dict(cls, doc: dict) -> "Topology":
        try:
            vnf_types = [str(x) for x in doc["vnf_types"]]
            node_ids = [int(x) for x in doc["nodes"]]
            if sorted(node_ids) != list(range(len(node_ids))):
                raise TopologyError("node ids must be unique and dense in [0, |N|)")
            declared = set(node_ids)
            edges = []
            for e in doc["edges"]:
                u, v = int(e["u"]), int(e["v"])
                if u not in declared or v not in declared:
                    raise TopologyError(f"edge ({u},{v}) references an undeclared node")
                edges.append(Edge(u, v, float(e["delay_ms"]), float(e["bandwidth"])))
            instances = []
            for m in doc.get("instances", []):
                name = m["vnf_type"]
                if name not in vnf_types:
                    raise TopologyError(f"unknown VNF type {name!r}")
                instances.append(VnfInstance(int(m["host"]), vnf_types.index(name),
                                             float(m["proc_delay_ms"]), float(m["capacity"])))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, TopologyError):
                raise
            raise TopologyError(f"malformed topology document: {exc!r}") from exc
        return cls(len(node_ids), edges, instances, vnf_types)

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "vnf_types": list(self.vnf_types),
            "edges": [{"u": e.u, "v": e.v, "delay_ms": e.delay_ms, "bandwidth": e.bandwidth}
                      for e in self.edges],
            "instances": [{"host": m.host, "vnf_type": self.vnf_types[m.vnf_type],
                           "proc_delay_ms": m.proc_delay_ms, "capacity": m.capacity}
                          for m in self.instances],
        }

    def digest(self) -> str:
        """Content hash used to tie datasets and checkpoints to a topology."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def relabel(self, perm: Sequence[int]) -> "Topology":
        """Return a copy with node ``u`` renamed to ``perm[u]``."""
        edges = [Edge(perm[e.u], perm[e.v], e.delay_ms, e.bandwidth) for e in self.edges]
        inst = [VnfInstance(perm[m.host], m.vnf_type, m.proc_delay_ms, m.capacity)
                for m in self.instances]
        return Topology(self.num_nodes, edges, inst, self.vnf_types)

    def __repr__(self) -> str:
        return (f"Topology(|N|={self.num_nodes}, |E|={len(self.edges)}, "
                f"instances={len(self.instances)}, vnf_types={list(self.vnf_types)})")


def load_topology(text: str) -> Topology:
    """Parse and validate a JSON topology document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TopologyError(f"cannot parse topology JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise TopologyError("topology document must be a JSON object")
    return Topology.from_dict(doc)


def read_topology(path) -> Topology:
    with open(path, encoding="utf-8") as fh:
        return load_topology(fh.read())


def neighbors(t: Topology, u: int) -> frozenset[int]:
    return frozenset(t.neighbors(u))


@dataclass(frozen=True)
class Request:
    id: int
    source: int
    destination: int
    chain: tuple[int, ...]
    bandwidth_demand: float
    max_delay_ms: float
    arrival_time: int
    expiry_time: int

    def __post_init__(self):
        object.__setattr__(self, "chain", tuple(int(c) for c in self.chain))
        if not self.arrival_time < self.expiry_time:
            raise ValueError("request must arrive before it expires")
        if not self.bandwidth_demand > 0:
            raise ValueError("bandwidth demand must be positive")

    def to_dict(self) -> dict:
        return {"id": self.id, "source": self.source, "destination": self.destination,
                "chain": list(self.chain), "bandwidth_demand": self.bandwidth_demand,
                "max_delay_ms": self.max_delay_ms, "arrival_time": self.arrival_time,
                "expiry_time": self.expiry_time}

    @classmethod
    def from_dict(cls, d: dict) -> "Request":
        return cls(int(d["id"]), int(d["source"]), int(d["destination"]), tuple(d["chain"]),
                   float(d["bandwidth_demand"]), float(d["max_delay_ms"]),
                   int(d["arrival_time"]), int(d["expiry_time"]))


@dataclass(frozen=True)
class SfcPath:
    steps: tuple[tuple[int, bool], ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple((int(n), bool(p)) for n, p in self.steps))

    @classmethod
    def of(cls, steps: Iterable) -> "SfcPath":
        return cls(tuple(steps))

    @property
    def nodes(self) -> list[int]:
        return [n for n, _ in self.steps]

    @property
    def processing_nodes(self) -> list[int]:
        return [n for n, p in self.steps if p]

    def __len__(self) -> int:
        return len(self.steps)

    def edge_multiset(self, t: Topology) -> Counter:
        """Edge id -> number of traversals."""
        return Counter(t.edge_id(a, b) for (a, _), (b, _) in zip(self.steps, self.steps[1:]))

    def instance_uses(self, t: Topology, chain: Sequence[int]) -> list[int]:
        """Instance ids used by the processing steps, in chain order."""
        used = []
        for k, node in enumerate(self.processing_nodes):
            if k >= len(chain):
                raise InvalidPath("more processing steps than chain entries")
            inst = t.instance_id(node, chain[k])
            if inst is None:
                raise InvalidPath(f"node {node} does not host VNF type {chain[k]}")
            used.append(inst)
        return used

    def to_list(self) -> list:
        return [[n, int(p)] for n, p in self.steps]

    @classmethod
    def from_list(cls, rows) -> "SfcPath":
        return cls(tuple((int(n), bool(p)) for n, p in rows))


def path_cost(t: Topology, p: SfcPath, chain: Sequence[int]) -> float:
    """Total traversal delay (with multiplicity) plus processing delay of ``p``."""
    cost = 0.0
    for (a, _), (b, _) in zip(p.steps, p.steps[1:]):
        cost += t.edges[t.edge_id(a, b)].delay_ms
    for inst in p.instance_uses(t, chain):
        cost += t.instances[inst].proc_delay_ms
    return cost


class Status(str, Enum):
    VALID = "valid"
    FAILURE = "failure"
    OVERMAX = "overmax"


class ResourceLedger:
    """Residual edge bandwidth and instance capacity.

    Residuals are held as exact rationals so that releasing a request restores
    the state that existed before it was applied, independent of the order in
    which other requests come and go.
    """

    def __init__(self, t: Topology):
        self._edge_cap = [Fraction(e.bandwidth) for e in t.edges]
        self._inst_cap = [Fraction(m.capacity) for m in t.instances]
        self._edge = list(self._edge_cap)
        self._inst = list(self._inst_cap)

    def copy(self) -> "ResourceLedger":
        new = object.__new__(ResourceLedger)
        new._edge_cap, new._inst_cap = self._edge_cap, self._inst_cap
        new._edge, new._inst = list(self._edge), list(self._inst)
        return new

    @property
    def edge_residuals(self) -> list[float]:
        return [float(x) for x in self._edge]

    @property
    def instance_residuals(self) -> list[float]:
        return [float(x) for x in self._inst]

    def edge_ok(self, demand: float) -> list[bool]:
        d = Fraction(demand)
        return [x >= d for x in self._edge]

    def instance_ok(self, demand: float) -> list[bool]:
        d = Fraction(demand)
        return [x >= d for x in self._inst]

    def instance_has(self, inst: int, demand: float) -> bool:
        return self._inst[inst] >= Fraction(demand)

    def fits(self, t: Topology, r: Request, p: SfcPath) -> bool:
        try:
            edges, insts = self._usage(t, r, p)
        except InvalidPath:
            return False
        d = Fraction(r.bandwidth_demand)
        return (all(self._edge[e] >= d * k for e, k in edges.items())
                and all(self._inst[i] >= d * k for i, k in insts.items()))

    @staticmethod
    def _usage(t: Topology, r: Request, p: SfcPath) -> tuple[Counter, Counter]:
        return p.edge_multiset(t), Counter(p.instance_uses(t, r.chain))

    def apply(self, t: Topology, r: Request, p: SfcPath) -> "ResourceLedger":
        """Consume ``r``'s demand along ``p`` in place; returns ``self``."""
        edges, insts = self._usage(t, r, p)
        d = Fraction(r.bandwidth_demand)
        for e, k in edges.items():
            if self._edge[e] < d * k:
                raise InsufficientResources(f"edge {t.edges[e].key} lacks bandwidth")
        for i, k in insts.items():
            if self._inst[i] < d * k:
                raise InsufficientResources(f"instance {i} lacks capacity")
        for e, k in edges.items():
            self._edge[e] -= d * k
        for i, k in insts.items():
            self._inst[i] -= d * k
        return self

    def release(self, t: Topology, r: Request, p: SfcPath) -> "ResourceLedger":
        """Return ``r``'s demand along ``p`` in place; returns ``self``."""
        edges, insts = self._usage(t, r, p)
        d = Fraction(r.bandwidth_demand)
        for e, k in edges.items():
            self._edge[e] += d * k
        for i, k in insts.items():
            self._inst[i] += d * k
        for e, cap in enumerate(self._edge_cap):
            if self._edge[e] > cap:
                raise ValueError("release exceeds edge capacity; request was not applied")
        for i, cap in enumerate(self._inst_cap):
            if self._inst[i] > cap:
                raise ValueError("release exceeds instance capacity; request was not applied")
        return self

    def __eq__(self, other) -> bool:
        return (isinstance(other, ResourceLedger) and self._edge == other._edge
                and self._inst == other._inst)

    def digest(self) -> str:
        blob = json.dumps([[x.numerator, x.denominator] for x in self._edge + self._inst])
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def min_residual(self) -> float:
        return float(min(self._edge + self._inst, default=0))


def apply_request(ledger: ResourceLedger, t: Topology, r: Request, p: SfcPath) -> ResourceLedger:
    return ledger.apply(t, r, p)


def release_request(ledger: ResourceLedger, t: Topology, r: Request, p: SfcPath) -> ResourceLedger:
    return ledger.release(t, r, p)


def structural_check(t: Topology, r: Request, p: SfcPath) -> str | None:
    """Return the reason ``p`` fails structurally for ``r``, or None."""
    if len(p) == 0:
        return "empty path"
    if len(p) > MAX_PATH_LEN:
        return f"path longer than {MAX_PATH_LEN} steps"
    if p.steps[0][0] != r.source:
        return "path does not start at the source"
    if p.steps[-1][0] != r.destination:
        return "path does not end at the destination"
    for (a, _), (b, _) in zip(p.steps, p.steps[1:]):
        if not t.has_edge(a, b):
            return f"nodes {a} and {b} are not adjacent"
    procs = p.processing_nodes
    if len(procs) != len(r.chain):
        return "chain not fully processed"
    for node, vnf in zip(procs, r.chain):
        if t.instance_id(node, vnf) is None:
            return f"node {node} does not host VNF type {vnf}"
    return None


def classify_path(t: Topology, r: Request, p: SfcPath, ledger: ResourceLedger) -> Status:
    if structural_check(t, r, p) is not None:
        return Status.FAILURE
    if not ledger.fits(t, r, p):
        return Status.FAILURE
    if path_cost(t, p, r.chain) > r.max_delay_ms:
        return Status.OVERMAX
    return Status.VALID
