"""Node annotation and edge adjacency matrices fed to the graph encoder."""
from __future__ import annotations

import math

import numpy as np

from .topology import Request, Topology


def annotation_width(t: Topology) -> int:
    """Feature count per node: one flag per VNF type, then source, then destination."""
    return t.num_vnf_types + 2


def build_annotation(t: Topology, r: Request) -> np.ndarray:
    m = t.num_vnf_types
    ann = np.zeros((t.num_nodes, m + 2))
    for inst in t.instances:
        ann[inst.host, inst.vnf_type] = 1.0
    ann[r.source, m] = 1.0
    ann[r.destination, m + 1] = 1.0
    return ann


def build_adjacency(t: Topology) -> np.ndarray:
    """Column-normalised inverse-delay adjacency.

    Column ``v`` holds the weights node ``v`` emits to its neighbours. Connected
    entries are standardised and soft-maxed within the column; non-edges stay 0.
    Column sums use ``math.fsum`` so the result does not depend on node numbering.
    """
    n = t.num_nodes
    out = np.zeros((n, n))
    for v in range(n):
        nbrs = list(t.neighbors(v))
        if not nbrs:
            continue
        raw = np.array([1.0 / t.edges[t.edge_id(u, v)].delay_ms for u in nbrs])
        mean = math.fsum(raw) / len(raw)
        std = math.sqrt(math.fsum((raw - mean) ** 2) / len(raw))
        if raw.max() > raw.min() and std > 0:
            raw = (raw - mean) / std
        e = np.exp(raw - raw.max())
        out[nbrs, v] = e / math.fsum(e)
    return out


def column_stochastic_check(a: np.ndarray, t: Topology | None = None, tol: float = 1e-9) -> bool:
    """True iff every column sums to one and zeros sit exactly on non-edges.

    Without a topology the zero pattern is checked for symmetry and an empty
    diagonal instead.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    if np.any(a < 0) or not np.allclose(a.sum(axis=0), 1.0, rtol=0, atol=tol):
        return False
    nz = a != 0
    if t is not None:
        mask = np.zeros_like(nz)
        for e in t.edges:
            mask[e.u, e.v] = mask[e.v, e.u] = True
        return bool(np.array_equal(nz, mask))
    return bool(np.array_equal(nz, nz.T) and not nz.diagonal().any())


def dump_csv(matrix: np.ndarray, path) -> None:
    np.savetxt(path, matrix, delimiter=",", fmt="%.17g")
