"""Exact minimum-delay SFC paths.

``solve_optimal`` runs Dijkstra on the product of the topology with chain
progress. A state is ``(node, stage, processed_here)``: moving along an edge
keeps the stage, processing the next chain VNF at the current node advances it.
``processed_here`` forbids two chain stages on a single visit. Residual
bandwidth and capacity are checked per edge/instance against the request's
demand, without accounting for a path that uses the same edge twice.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable, Iterator

from .topology import (InsufficientResources, Request, ResourceLedger, SfcPath, Status,
                       Topology, classify_path, path_cost)


@dataclass(frozen=True)
class OracleSolution:
    path: SfcPath | None
    cost: float
    feasible: bool

    @classmethod
    def infeasible(cls) -> "OracleSolution":
        return cls(None, float("inf"), False)


def _availability(t: Topology, r: Request, ledger: ResourceLedger | None):
    if ledger is None:
        return [True] * len(t.edges), [True] * len(t.instances)
    return ledger.edge_ok(r.bandwidth_demand), ledger.instance_ok(r.bandwidth_demand)


def solve_optimal(t: Topology, r: Request, ledger: ResourceLedger | None = None) -> OracleSolution:
    """Minimum-cost path for ``r`` under ``ledger`` (no capacity limits when None).

    Equal-cost candidates are ordered by their step sequence, so the returned
    path is reproducible.
    """
    edge_ok, inst_ok = _availability(t, r, ledger)
    chain, k = r.chain, len(r.chain)
    start = (r.source, 0, False)
    first = ((r.source, False),)
    best = {start: (0.0, first)}
    heap = [(0.0, first, start)]
    while heap:
        cost, steps, state = heapq.heappop(heap)
        if best.get(state) != (cost, steps):
            continue
        u, s, done_here = state
        if u == r.destination and s == k:
            path = SfcPath(steps)
            return OracleSolution(path, path_cost(t, path, chain), True)
        cand = []
        if not done_here and s < k:
            inst = t.instance_id(u, chain[s])
            if inst is not None and inst_ok[inst]:
                cand.append(((u, s + 1, True), cost + t.instances[inst].proc_delay_ms,
                             steps[:-1] + ((u, True),)))
        for v in t.neighbors(u):
            e = t.edge_id(u, v)
            if edge_ok[e]:
                cand.append(((v, s, False), cost + t.edges[e].delay_ms, steps + ((v, False),)))
        for nxt, c, st in cand:
            old = best.get(nxt)
            if old is None or (c, st) < old:
                best[nxt] = (c, st)
                heapq.heappush(heap, (c, st, nxt))
    return OracleSolution.infeasible()


BRUTE_MAX_NODES = 10
BRUTE_MAX_LEN = 12


def brute_force(t: Topology, r: Request, max_len: int = BRUTE_MAX_LEN,
                ledger: ResourceLedger | None = None) -> OracleSolution:
    """Exhaustive walk enumeration with processing-choice branching.

    ``max_len`` bounds the number of edge traversals. Walks that revisit a
    (node, stage, processed_here) state or already cost more than the best
    complete walk are cut, which cannot remove an optimum when delays are
    positive.
    """
    if t.num_nodes > BRUTE_MAX_NODES or max_len > BRUTE_MAX_LEN:
        raise ValueError(f"brute force limited to {BRUTE_MAX_NODES} nodes and "
                         f"{BRUTE_MAX_LEN} hops")
    edge_ok, inst_ok = _availability(t, r, ledger)
    chain, k = r.chain, len(r.chain)
    best: list = [float("inf"), None]
    steps: list[list] = [[r.source, False]]
    on_walk = {(r.source, 0, False)}

    def visit(u: int, s: int, done_here: bool, cost: float, hops: int) -> None:
        if cost > best[0]:
            return
        if u == r.destination and s == k:
            key = tuple((n, p) for n, p in steps)
            if best[1] is None or (cost, key) < (best[0], best[1]):
                best[0], best[1] = cost, key
            return
        if not done_here and s < k:
            inst = t.instance_id(u, chain[s])
            if inst is not None and inst_ok[inst] and (u, s + 1, True) not in on_walk:
                on_walk.add((u, s + 1, True))
                steps[-1][1] = True
                visit(u, s + 1, True, cost + t.instances[inst].proc_delay_ms, hops)
                steps[-1][1] = False
                on_walk.discard((u, s + 1, True))
        if hops == max_len:
            return
        for v in t.neighbors(u):
            e = t.edge_id(u, v)
            if edge_ok[e] and (v, s, False) not in on_walk:
                on_walk.add((v, s, False))
                steps.append([v, False])
                visit(v, s, False, cost + t.edges[e].delay_ms, hops + 1)
                steps.pop()
                on_walk.discard((v, s, False))

    visit(r.source, 0, False, 0.0, 0)
    if best[1] is None:
        return OracleSolution.infeasible()
    path = SfcPath(best[1])
    return OracleSolution(path, path_cost(t, path, chain), True)


@dataclass
class LabelRecord:
    request: Request
    solution: OracleSolution
    ledger_before: ResourceLedger
    status: Status | None

    @property
    def usable(self) -> bool:
        return self.solution.feasible and self.status == Status.VALID


def iter_labels(t: Topology, requests: Iterable[Request],
                ledger: ResourceLedger | None = None) -> Iterator[LabelRecord]:
    """Label requests one by one under a live ledger.

    Requests whose ``expiry_time`` is at or before the current arrival release
    their resources first. A feasible label is applied to the ledger; each
    record keeps a copy of the ledger its label was solved against.
    """
    ledger = ledger if ledger is not None else ResourceLedger(t)
    active: list = []
    last = None
    for r in requests:
        if last is not None and r.arrival_time < last:
            raise ValueError("requests must be sorted by arrival time")
        last = r.arrival_time
        while active and active[0][0] <= r.arrival_time:
            _, _, req, path = heapq.heappop(active)
            ledger.release(t, req, path)
        snap = ledger.copy()
        sol = solve_optimal(t, r, ledger)
        status = None
        if sol.feasible:
            status = classify_path(t, r, sol.path, ledger)
            if status == Status.FAILURE:
                # label reuses an edge beyond its residual: unroutable
                sol, status = OracleSolution.infeasible(), None
            else:
                try:
                    ledger.apply(t, r, sol.path)
                except InsufficientResources:
                    sol, status = OracleSolution.infeasible(), None
                else:
                    heapq.heappush(active, (r.expiry_time, r.id, r, sol.path))
        yield LabelRecord(r, sol, snap, status)


def label_request_sequence(t: Topology, requests: Iterable[Request],
                           ledger: ResourceLedger | None = None) -> list[LabelRecord]:
    return list(iter_labels(t, requests, ledger))


def reference_delay(t: Topology, r: Request) -> float:
    """Optimal delay ignoring capacities; basis for a request's delay budget."""
    sol = solve_optimal(t, r, None)
    return sol.cost if sol.feasible else float("inf")
