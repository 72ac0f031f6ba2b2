"""Dynamic request streams, oracle labelling and dataset files.

A dataset file is JSON lines: a header object, then one sample per line.
Samples are split chronologically (train earliest, then validation, then
test) and split boundaries never share an arrival tick.
"""
from __future__ import annotations

import gzip
import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .io import atomic_write_bytes, canonical_json, digest
from .oracle import iter_labels, reference_delay
from .topology import Request, SfcPath, Topology

DATASET_FORMAT = "gnnsfc-dataset"
DATASET_VERSION = 1
SPLITS = ("train", "val", "test")

DEFAULT_CATALOG = (
    ("Firewall", "NAT"),
    ("Firewall", "IDS", "Proxy"),
    ("NAT", "WANopt"),
    ("IDS", "Proxy", "WANopt"),
    ("Firewall", "NAT", "WANopt"),
)


class DatasetError(ValueError):
    pass


@dataclass
class SimulationConfig:
    seed: int = 0
    ticks: int | None = None            # None: run until the dataset is full
    arrival_rate: float = 2.0           # Poisson mean arrivals per tick
    lifetime: tuple[int, int] = (6, 20)  # inclusive range of ticks
    catalog: tuple[tuple[str, ...], ...] = DEFAULT_CATALOG
    bandwidth: tuple[float, float] = (1.0, 5.0)
    max_delay_factor: float = 1.5

    def __post_init__(self):
        self.lifetime = tuple(int(x) for x in self.lifetime)
        self.bandwidth = tuple(float(x) for x in self.bandwidth)
        self.catalog = tuple(tuple(c) for c in self.catalog)
        if self.arrival_rate < 0:
            raise ValueError("arrival rate must be non-negative")
        if not self.catalog:
            raise ValueError("request catalogue is empty")
        if not 1 <= self.lifetime[0] <= self.lifetime[1]:
            raise ValueError("lifetime range must satisfy 1 <= min <= max")
        if not 0 < self.bandwidth[0] <= self.bandwidth[1]:
            raise ValueError("bandwidth range must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lifetime"] = list(self.lifetime)
        d["bandwidth"] = list(self.bandwidth)
        d["catalog"] = [list(c) for c in self.catalog]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        return cls(**d)


def iter_stream(cfg: SimulationConfig, t: Topology) -> Iterator[Request]:
    """Requests in arrival order, generated tick by tick from ``cfg.seed``."""
    if t.num_nodes < 2:
        raise ValueError("request streams need at least two nodes")
    rng = np.random.default_rng(cfg.seed)
    chains = [tuple(t.type_id(name) for name in c) for c in cfg.catalog]
    rid = 0
    ticks = itertools.count() if cfg.ticks is None else range(cfg.ticks)
    if cfg.arrival_rate == 0:
        return
    for tick in ticks:
        for _ in range(int(rng.poisson(cfg.arrival_rate))):
            chain = chains[int(rng.integers(len(chains)))]
            src, dst = (int(x) for x in rng.choice(t.num_nodes, size=2, replace=False))
            life = int(rng.integers(cfg.lifetime[0], cfg.lifetime[1] + 1))
            bw = round(float(rng.uniform(*cfg.bandwidth)), 3)
            probe = Request(rid, src, dst, chain, bw, 1.0, tick, tick + life)
            budget = cfg.max_delay_factor * reference_delay(t, probe)
            yield Request(rid, src, dst, chain, bw, budget, tick, tick + life)
            rid += 1


def simulate_stream(cfg: SimulationConfig, t: Topology) -> list[Request]:
    if cfg.ticks is None:
        raise ValueError("simulate_stream needs a finite tick count")
    return list(iter_stream(cfg, t))


def stream_events(requests: list[Request]) -> list[tuple[int, str, Request]]:
    """Arrival/expiry events sorted by tick; expiries come first within a tick."""
    ev = [(r.arrival_time, 1, r.id, "arrival", r) for r in requests]
    ev += [(r.expiry_time, 0, r.id, "expiry", r) for r in requests]
    ev.sort(key=lambda e: e[:3])
    return [(tick, kind, r) for tick, _, _, kind, r in ev]


def mean_active(requests: list[Request], start: int, stop: int) -> float:
    """Average number of active requests per tick over ``[start, stop)``."""
    counts = np.zeros(stop - start)
    for r in requests:
        lo, hi = max(r.arrival_time, start), min(r.expiry_time, stop)
        if lo < hi:
            counts[lo - start:hi - start] += 1
    return float(counts.mean()) if len(counts) else 0.0


@dataclass
class DatasetSample:
    request: Request
    label: SfcPath
    label_cost: float
    ledger_digest: str
    active_list: int        # arrival tick = id of the active-request list
    split: str

    def to_dict(self) -> dict:
        return {"request": self.request.to_dict(), "label": self.label.to_list(),
                "label_cost": self.label_cost, "ledger": self.ledger_digest,
                "active_list": self.active_list, "split": self.split}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSample":
        return cls(Request.from_dict(d["request"]), SfcPath.from_list(d["label"]),
                   float(d["label_cost"]), d["ledger"], int(d["active_list"]), d["split"])


@dataclass
class DatasetFile:
    header: dict
    samples: list[DatasetSample] = field(default_factory=list)

    def split(self, name: str) -> list[DatasetSample]:
        if name not in SPLITS:
            raise KeyError(name)
        return [s for s in self.samples if s.split == name]

    @property
    def topology_hash(self) -> str:
        return self.header["topology_hash"]

    def to_bytes(self) -> bytes:
        lines = [canonical_json(self.header)] + [canonical_json(s.to_dict()) for s in self.samples]
        return ("\n".join(lines) + "\n").encode("utf-8")


def build_dataset(cfg: SimulationConfig, t: Topology,
                  sizes: tuple[int, int, int] = (2000, 100, 500)) -> DatasetFile:
    """Label a simulated stream and keep the first usable samples per split."""
    sizes = tuple(int(s) for s in sizes)
    want = dict(zip(SPLITS, sizes))
    samples: list[DatasetSample] = []
    audit = {"requests": 0, "feasible": 0, "excluded": 0, "boundary_skipped": 0}
    split_idx, count, boundary_tick = 0, 0, None
    while split_idx < len(SPLITS) and want[SPLITS[split_idx]] == 0:
        split_idx += 1
    records = iter_labels(t, iter_stream(cfg, t)) if split_idx < len(SPLITS) else iter(())
    for rec in records:
        audit["requests"] += 1
        if rec.solution.feasible:
            audit["feasible"] += 1
        if not rec.usable:
            audit["excluded"] += 1
            continue
        r = rec.request
        if boundary_tick is not None and r.arrival_time <= boundary_tick:
            audit["boundary_skipped"] += 1
            continue
        name = SPLITS[split_idx]
        samples.append(DatasetSample(r, rec.solution.path, rec.solution.cost,
                                     rec.ledger_before.digest(), r.arrival_time, name))
        count += 1
        if count == want[name]:
            boundary_tick = r.arrival_time
            split_idx += 1
            count = 0
            while split_idx < len(SPLITS) and want[SPLITS[split_idx]] == 0:
                split_idx += 1
            if split_idx == len(SPLITS):
                break
    got = {s: sum(1 for x in samples if x.split == s) for s in SPLITS}
    if got != want:
        raise DatasetError(f"stream produced too few usable samples: {got} < {want}")
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "topology_hash": t.digest(),
        "config": cfg.to_dict(),
        "config_digest": digest({"sim": cfg.to_dict(), "sizes": list(sizes)}),
        "counts": got,
        "audit": audit,
    }
    return DatasetFile(header, samples)


def write_dataset(ds: DatasetFile, path) -> None:
    data = ds.to_bytes()
    if str(path).endswith(".gz"):
        data = gzip.compress(data, mtime=0)
    atomic_write_bytes(path, data)


def parse_dataset(data: bytes, topology: Topology | None = None) -> DatasetFile:
    try:
        text = data.decode("utf-8")
        lines = text.split("\n")
        if not text.endswith("\n"):
            raise DatasetError("dataset file is truncated (no trailing newline)")
        lines = lines[:-1]
        header = json.loads(lines[0])
        samples = [DatasetSample.from_dict(json.loads(line)) for line in lines[1:]]
    except DatasetError:
        raise
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise DatasetError(f"cannot parse dataset: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise DatasetError("not a dataset file")
    if header.get("version") != DATASET_VERSION:
        raise DatasetError(f"unsupported dataset version {header.get('version')}")
    got = {s: sum(1 for x in samples if x.split == s) for s in SPLITS}
    if got != header.get("counts"):
        raise DatasetError(f"sample counts {got} disagree with header {header.get('counts')}")
    if topology is not None and topology.digest() != header["topology_hash"]:
        raise DatasetError("dataset was generated for a different topology (hash mismatch)")
    return DatasetFile(header, samples)


def load_dataset(path, topology: Topology | None = None) -> DatasetFile:
    raw = Path(path).read_bytes()
    if str(path).endswith(".gz"):
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise DatasetError(f"corrupt gzip dataset: {exc}") from exc
    return parse_dataset(raw, topology)
