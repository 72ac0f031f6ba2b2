"""Training loop, evaluation metrics and the changed-topology experiment."""
from __future__ import annotations

import csv
import heapq
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dataset import DatasetFile, DatasetSample
from .io import atomic_write_text, canonical_json
from .model import IncompatibleTopology, SfcModel, build_model
from .nn import rmsprop_step
from .topology import (Edge, ResourceLedger, SfcPath, Status, Topology, TopologyError,
                       VnfInstance, path_cost)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    variant: str = "gg-rnn"
    epochs: int = 30
    lr: float = 1e-4
    lr_decay: float = 0.5
    lr_patience: int = 2
    early_stop_patience: int = 4
    dropout: float = 0.1
    seed: int = 0
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    max_train_samples: int | None = None
    model: dict = field(default_factory=dict)   # ModelConfig overrides (dims, T)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.lr_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be >= 1")


@dataclass
class TrainResult:
    model: SfcModel
    log: list[dict]
    best_epoch: int
    timings: list[float]


def _check_hash(dataset: DatasetFile, t: Topology) -> None:
    if dataset.topology_hash != t.digest():
        raise ValueError("dataset topology hash does not match the topology")


def teacher_forced_metrics(model: SfcModel, samples: list[DatasetSample], t: Topology) -> dict:
    """Mean per-sample loss and next-node accuracy with dropout off."""
    was = model.training
    model.eval()
    total, correct, moves = 0.0, 0, 0
    with ad.no_grad():
        for s in samples:
            _, rep = model.teacher_forced_loss(t, s.request, s.label)
            total += rep.loss
            correct += rep.correct
            moves += rep.moves
    model.train(was)
    n = len(samples)
    return {"loss": total / n if n else None,
            "accuracy": correct / moves if moves else None}


def train(cfg: TrainConfig, dataset: DatasetFile, t: Topology,
          model: SfcModel | None = None) -> TrainResult:
    """RMSprop with batch size 1, lr decay on plateaus and early stopping.

    The validation criterion is the teacher-forced loss; the returned model
    holds the parameters of the best validation epoch.
    """
    _check_hash(dataset, t)
    if model is None:
        model = build_model(cfg.variant, t, seed=cfg.seed,
                            **{"dropout": cfg.dropout, **cfg.model})
    train_set = dataset.split("train")
    if cfg.max_train_samples is not None:
        train_set = train_set[:cfg.max_train_samples]
    val_set = dataset.split("val")
    if not train_set:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(cfg.seed)
    params = model.store.params
    lr = cfg.lr
    best, best_epoch, best_snap = math.inf, 0, model.store.snapshot()
    since_best = since_decay = 0
    log, timings = [], []
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train_set))
        total, first = 0.0, None
        for i in order:
            s = train_set[i]
            holder = {}

            def loss_fn():
                loss, rep = model.teacher_forced_loss(t, s.request, s.label)
                holder["rep"] = rep
                return loss
            grads = ad.grad(loss_fn, params)
            value = holder["rep"].loss
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, request {s.request.id}")
            if first is None:
                first = value
            total += value
            rmsprop_step(model.store, grads, lr, cfg.rms_decay, cfg.rms_eps)
        val = teacher_forced_metrics(model, val_set, t) if val_set else {"loss": None,
                                                                        "accuracy": None}
        entry = {"epoch": epoch, "train_loss": total / len(train_set), "first_loss": first,
                 "val_loss": val["loss"], "val_accuracy": val["accuracy"], "lr": lr}
        log.append(entry)
        timings.append(time.perf_counter() - started)
        crit = val["loss"] if val["loss"] is not None else entry["train_loss"]
        if crit < best:
            best, best_epoch, best_snap = crit, epoch, model.store.snapshot()
            since_best = since_decay = 0
        else:
            since_best += 1
            since_decay += 1
            if since_decay >= cfg.lr_patience:
                lr *= cfg.lr_decay
                since_decay = 0
            if since_best >= cfg.early_stop_patience:
                break
    model.store.restore(best_snap)
    model.eval()
    return TrainResult(model, log, best_epoch, timings)


def training_log_text(log: list[dict]) -> str:
    return "".join(canonical_json(e) + "\n" for e in log)


# -- evaluation ------------------------------------------------------------
@dataclass
class EvalRecord:
    request_id: int
    status: str
    cost: float | None
    label_cost: float
    ratio: float | None
    path: list

    def to_row(self) -> dict:
        return {"request_id": self.request_id, "status": self.status,
                "cost": "" if self.cost is None else repr(self.cost),
                "label_cost": repr(self.label_cost),
                "ratio": "" if self.ratio is None else repr(self.ratio),
                "path": " ".join(f"{n}{'*' if p else ''}" for n, p in self.path)}


@dataclass
class EvalReport:
    name: str = ""
    total: int = 0
    valid: int = 0
    failure: int = 0
    overmax: int = 0
    avg_cost_ratio: float | None = None
    cost_ratio_var: float | None = None
    not_applicable: str | None = None
    records: list[EvalRecord] = field(default_factory=list)

    @property
    def fail_ratio(self) -> float | None:
        return self.failure / self.total if self.total else None

    @property
    def overmax_ratio(self) -> float | None:
        return self.overmax / self.total if self.total else None

    @property
    def valid_ratio(self) -> float | None:
        return self.valid / self.total if self.total else None

    def summary(self) -> dict:
        if self.not_applicable is not None:
            return {"model": self.name, "not_applicable": True, "reason": self.not_applicable}
        return {
            "model": self.name,
            "not_applicable": False,
            "avg_cost_ratio": self.avg_cost_ratio,
            "cost_ratio_var": self.cost_ratio_var,
            "fail_ratio": self.fail_ratio,
            "overmax": self.overmax_ratio,
            "counts": {"total": self.total, "valid": self.valid, "failure": self.failure,
                       "overmax": self.overmax},
        }

    def table_row(self) -> str:
        if self.not_applicable is not None:
            return f"{self.name:<16} | Not applicable"

        def fmt(x):
            return "  n/a" if x is None else f"{x:.3f}"
        return (f"{self.name:<16} | {fmt(self.avg_cost_ratio)} ({fmt(self.cost_ratio_var)}) | "
                f"{fmt(self.fail_ratio)} | {fmt(self.overmax_ratio)}")


def evaluate(model, samples: list[DatasetSample], t: Topology, name: str = "") -> EvalReport:
    """Replay requests in arrival order under a live ledger and score the generated paths.

    ``model`` needs ``generate_path(t, request, ledger) -> (path, status)``;
    if it also has ``check_compatible`` an incompatibility yields a
    not-applicable report. Variance of the cost ratio is the population variance.
    """
    report = EvalReport(name=name)
    check = getattr(model, "check_compatible", None)
    if check is not None:
        try:
            check(t)
        except IncompatibleTopology as exc:
            report.not_applicable = str(exc)
            return report
    ledger = ResourceLedger(t)
    active: list = []
    ratios = []
    for s in sorted(samples, key=lambda x: (x.request.arrival_time, x.request.id)):
        r = s.request
        while active and active[0][0] <= r.arrival_time:
            _, _, req, p = heapq.heappop(active)
            ledger.release(t, req, p)
        path, status = model.generate_path(t, r, ledger)
        cost = ratio = None
        if status != Status.FAILURE:
            cost = path_cost(t, path, r.chain)
            ledger.apply(t, r, path)
            heapq.heappush(active, (r.expiry_time, r.id, r, path))
            if s.label_cost > 0:
                ratio = cost / s.label_cost
            elif cost == 0:
                ratio = 1.0
            if ratio is not None:
                ratios.append(ratio)
        report.total += 1
        if status == Status.VALID:
            report.valid += 1
        elif status == Status.OVERMAX:
            report.overmax += 1
        else:
            report.failure += 1
        report.records.append(EvalRecord(r.id, status.value, cost, s.label_cost, ratio,
                                         [list(x) for x in path.steps]))
    if ratios:
        arr = np.array(ratios)
        report.avg_cost_ratio = float(arr.mean())
        report.cost_ratio_var = float(arr.var())
    return report


class LabelReplay:
    """Stand-in model that returns the stored oracle label of each request."""

    def __init__(self, samples: list[DatasetSample]):
        self._labels = {s.request.id: s.label for s in samples}

    def generate_path(self, t: Topology, r, ledger: ResourceLedger):
        from .topology import classify_path
        path = self._labels[r.id]
        return path, classify_path(t, r, path, ledger)


def report_emit(report: EvalReport, out_dir, stem: str | None = None,
                extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (one row per request) and ``<stem>.json`` (summary).

    ``extra`` entries (provenance such as config digests) are merged into the JSON.
    """
    out_dir = Path(out_dir)
    stem = stem or report.name or "report"
    buf = io.StringIO()
    fields = ["request_id", "status", "cost", "label_cost", "ratio", "path"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for rec in report.records:
        writer.writerow(rec.to_row())
    csv_path, json_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
    atomic_write_text(csv_path, buf.getvalue())
    summary = {**(extra or {}), **report.summary()}
    atomic_write_text(json_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


# -- changed topology -------------------------------------------------------
@dataclass
class TopologyPatch:
    nodes: list[int] = field(default_factory=list)
    edges: list[dict] = field(default_factory=list)      # {u, v, delay_ms|None, bandwidth}
    instances: list[dict] = field(default_factory=list)  # {host, vnf_type, proc_delay_ms, capacity}

    @classmethod
    def from_dict(cls, d: dict) -> "TopologyPatch":
        return cls(list(d.get("nodes", [])), list(d.get("edges", [])),
                   list(d.get("instances", [])))

    @classmethod
    def read(cls, path) -> "TopologyPatch":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def apply_patch(t: Topology, patch: TopologyPatch) -> Topology:
    """Topology with the patch's nodes, edges and instances added.

    Edges without a delay get the smallest delay of the base topology.
    """
    n = t.num_nodes
    if sorted(patch.nodes) != list(range(n, n + len(patch.nodes))):
        raise TopologyError(f"patch nodes must continue the id range from {n}")
    default_delay = min(e.delay_ms for e in t.edges)
    default_bw = min(e.bandwidth for e in t.edges)
    edges = list(t.edges)
    for e in patch.edges:
        d = e.get("delay_ms")
        edges.append(Edge(int(e["u"]), int(e["v"]), float(default_delay if d is None else d),
                          float(e.get("bandwidth") or default_bw)))
    inst = list(t.instances)
    for m in patch.instances:
        inst.append(VnfInstance(int(m["host"]), t.type_id(m["vnf_type"]),
                                float(m["proc_delay_ms"]), float(m["capacity"])))
    return Topology(n + len(patch.nodes), edges, inst, t.vnf_types)


def changed_topology_experiment(models: dict, base: Topology, patch: TopologyPatch,
                                samples: list[DatasetSample]) -> dict[str, tuple[EvalReport, EvalReport]]:
    """Evaluate every model on the base and the patched topology, without retraining."""
    patched = apply_patch(base, patch)
    out = {}
    for name, model in models.items():
        out[name] = (evaluate(model, samples, base, name=name),
                     evaluate(model, samples, patched, name=name))
    return out
