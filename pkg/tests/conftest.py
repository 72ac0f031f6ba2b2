import json
import os
from importlib import resources

# keep BLAS single-threaded so timings match a plain single-core run
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from gnnsfc.topology import Edge, Request, Topology, VnfInstance, load_topology

TYPES = ("A", "B", "C")


def make_topology(n_nodes, edges, instances=(), types=TYPES, bandwidth=100.0):
    """edges: (u, v, delay); instances: (host, type_id, proc_delay[, capacity])."""
    es = [Edge(u, v, float(d), bandwidth) for u, v, d in edges]
    ms = [VnfInstance(m[0], m[1], float(m[2]), float(m[3]) if len(m) > 3 else 50.0)
          for m in instances]
    return Topology(n_nodes, es, ms, types)


def random_topology(rng, n_min=3, n_max=8, n_types=3, p_extra=0.3, p_host=0.35,
                    int_delays=True):
    n = int(rng.integers(n_min, n_max + 1))
    order = rng.permutation(n)
    edges = {}
    for i in range(1, n):
        u, v = int(order[i]), int(order[rng.integers(i)])
        edges[(min(u, v), max(u, v))] = None
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < p_extra:
                edges[(u, v)] = None
    delay = (lambda: float(rng.integers(1, 10))) if int_delays else (lambda: float(rng.uniform(0.5, 9)))
    es = [(u, v, delay()) for (u, v) in sorted(edges)]
    inst = [(u, k, float(rng.integers(1, 5)) if int_delays else float(rng.uniform(0.5, 4)))
            for u in range(n) for k in range(n_types) if rng.random() < p_host]
    return make_topology(n, es, inst, types=tuple("ABCDEFG"[:n_types]))


def request(src, dst, chain=(), bw=1.0, max_delay=1e9, rid=0, arrival=0, expiry=10):
    return Request(rid, src, dst, tuple(chain), bw, max_delay, arrival, expiry)


@pytest.fixture(scope="session")
def internet2():
    text = resources.files("gnnsfc.data").joinpath("internet2.json").read_text()
    return load_topology(text)


@pytest.fixture
def triangle():
    return make_topology(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])


@pytest.fixture
def line3():
    # 0 - 1 - 2, type 0 hosted only at node 1
    return make_topology(3, [(0, 1, 1.0), (1, 2, 1.0)], [(1, 0, 2.0)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines collected by tests/test_acceptance.py, shown after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
