"""Exact optimal chaining with the layered shortest-path oracle.

Solves one request on the bundled topology, cross-checks the answer against
exhaustive search on a small random graph, and shows how residual capacity
changes the optimum.
"""
import numpy as np

from gnnsfc.oracle import brute_force, solve_optimal
from gnnsfc.topology import Edge, Request, ResourceLedger, Topology, VnfInstance, path_cost

from _common import bundled_topology

t = bundled_topology()
r = Request(id=0, source=0, destination=11, chain=(0, 1), bandwidth_demand=2.0,
            max_delay_ms=1e9, arrival_time=0, expiry_time=10)
sol = solve_optimal(t, r)
print("optimal path:", " ".join(f"{u}{'*' if p else ''}" for u, p in sol.path.steps))
print("cost:", sol.cost, "== path_cost:", path_cost(t, sol.path, r.chain))

# exhaustive search agrees on a small instance
rng = np.random.default_rng(3)
edges = [Edge(0, 1, 2.0, 10.0), Edge(1, 2, 1.0, 10.0), Edge(0, 3, 1.0, 10.0),
         Edge(3, 2, 4.0, 10.0), Edge(1, 3, 1.0, 10.0)]
inst = [VnfInstance(3, 0, 2.0, 10.0), VnfInstance(1, 0, 5.0, 10.0), VnfInstance(2, 1, 1.0, 10.0)]
small = Topology(4, edges, inst, ("A", "B"))
q = Request(id=1, source=0, destination=2, chain=(0, 1), bandwidth_demand=4.0,
            max_delay_ms=1e9, arrival_time=0, expiry_time=5)
a, b = solve_optimal(small, q), brute_force(small, q)
print("\nsmall instance: oracle", a.cost, "brute force", b.cost)

# consuming capacity at the cheaper VNF host moves the optimum
ledger = ResourceLedger(small)
ledger.apply(small, q, a.path)
ledger.apply(small, q, a.path)
c = solve_optimal(small, q, ledger)
print("after two placements the oracle returns", "infeasible" if not c.feasible else
      f"{[s for s in c.path.steps]} at cost {c.cost}")
