import math

import numpy as np
import pytest

from gnnsfc import autodiff as ad
from gnnsfc.features import build_adjacency, build_annotation
from gnnsfc.model import (IncompatibleTopology, ModelConfig, SfcModel, StepPlan, baseline_forward,
                          build_model, plan_steps)
from gnnsfc.oracle import solve_optimal
from gnnsfc.topology import InvalidPath, MAX_PATH_LEN, SfcPath, Status, Topology

from conftest import make_topology, random_topology, request
from gradcheck import numeric_grad, rel_error
from nn_reference import gru

TINY = dict(steps=2, d_state=6, d_annotation=4, d_vnf=3, d_node=2, hidden=5, layers=2, dropout=0.0)


def tiny(variant, t, seed=0, **over):
    return build_model(variant, t, seed, **{**TINY, **over})


def k4():
    return make_topology(4, [(u, v, 1.0 + u + v) for u in range(4) for v in range(u + 1, 4)],
                         [(1, 0, 1.0), (2, 1, 1.0), (3, 2, 1.0)])


def zero_weights(model):
    for _, p in model.store.items():
        p.data[...] = 0.0


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        ModelConfig(steps=0)
    with pytest.raises(ValueError):
        ModelConfig(d_annotation=200, d_state=128)
    with pytest.raises(ValueError):
        ModelConfig(variant="lstm")
    with pytest.raises(ValueError):
        ModelConfig(variant="dnn")
    with pytest.raises(ValueError):
        ModelConfig(max_path_len=0)


def test_default_sizes(internet2):
    m = build_model("gg-rnn", internet2)
    assert m.store.num_weights() > 0
    assert m.cfg.d_state == 128 and m.cfg.hidden == 256 and m.cfg.steps == 5


@pytest.mark.parametrize("variant", ["gg-dnn", "gg-rnn"])
def test_encode_symmetric_pair(variant):
    t = make_topology(2, [(0, 1, 2.0)], [(0, 0, 1.0), (1, 0, 1.0)])
    m = tiny(variant, t, seed=3)
    ann = np.zeros((2, t.num_vnf_types + 2))
    ann[:, 0] = 1
    h = m.encode(ann, m.view(t)).data
    np.testing.assert_array_equal(h[0], h[1])


def test_encode_single_step():
    t = make_topology(3, [(0, 1, 1.0), (1, 2, 3.0)], [(1, 0, 1.0)])
    m = tiny("gg-dnn", t, seed=1, steps=1)
    ann = build_annotation(t, request(0, 2, (0,)))
    h0 = np.concatenate([ann @ m.ann_embed.data, np.zeros((3, 2))], axis=1)
    a = build_adjacency(t).T @ h0
    np.testing.assert_allclose(m.encode(ann, m.view(t)).data, gru(m.enc_gru, a, h0), rtol=1e-12)


def test_encode_rows_follow_topology(internet2):
    m = tiny("gg-rnn", internet2)
    t14 = make_topology(14, [(i, i + 1, 1.0) for i in range(13)], types=internet2.vnf_types)
    h = m.encode(build_annotation(t14, request(0, 13)), m.view(t14))
    assert h.data.shape == (14, m.cfg.d_state)
    with pytest.raises(ValueError):
        m.encode(np.zeros((3, 7)), m.view(internet2))


@pytest.mark.parametrize("seed", range(10))
def test_encode_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    t = random_topology(rng, 4, 9, int_delays=False)
    perm = rng.permutation(t.num_nodes)
    tp = t.relabel(perm)
    m = tiny("gg-rnn", t, seed=seed, d_state=16, d_annotation=16)
    r = request(0, t.num_nodes - 1, (0,))
    rp = request(int(perm[0]), int(perm[-1]), (0,))
    h = m.encode(build_annotation(t, r), m.view(t)).data
    hp = m.encode(build_annotation(tp, rp), m.view(tp)).data
    assert hp[perm].tobytes() == h.tobytes()


def _decode(m, t, n_prev, chain=(0,), stage=0):
    view = m.view(t)
    memory = m._memory(t, request(0, t.num_nodes - 1, chain))[1]
    return m.decode_step(memory, view, n_prev, chain, stage)[0]


@pytest.mark.parametrize("variant", ["dnn", "gg-dnn", "gg-rnn"])
def test_single_neighbor_certain(variant, line3):
    out = _decode(tiny(variant, line3, seed=5), line3, 0)
    assert out.p_node[1] == 1.0 and out.p_node.sum() == 1.0


@pytest.mark.parametrize("variant", ["dnn", "gg-dnn", "gg-rnn"])
def test_equal_proc_scores_give_half(variant, triangle):
    m = tiny(variant, triangle, seed=2)
    zero_weights(m)
    out = _decode(m, triangle, 0)
    np.testing.assert_array_equal(out.p_proc, 0.5)
    np.testing.assert_array_equal(out.p_node, [0, 0.5, 0.5])


@pytest.mark.parametrize("variant", ["dnn", "gg-dnn", "gg-rnn"])
def test_mass_only_on_neighbors(variant):
    rng = np.random.default_rng(11)
    for seed in range(8):
        t = random_topology(rng, 4, 8)
        m = tiny(variant, t, seed=seed)
        for u in t.nodes:
            out = _decode(m, t, u, stage=int(rng.integers(0, 2)))
            off = np.setdiff1d(np.arange(t.num_nodes), t.neighbors(u))
            assert np.all(out.p_node[off] == 0.0)
            assert abs(out.p_node.sum() - 1.0) <= 1e-9
            assert np.all((0 <= out.p_proc) & (out.p_proc <= 1))


@pytest.mark.parametrize("variant", ["dnn", "gg-dnn", "gg-rnn"])
def test_trivial_request(variant, triangle):
    m = tiny(variant, triangle)
    path, status = m.generate_path(triangle, request(1, 1))
    assert path.steps == ((1, False),) and status == Status.VALID


@pytest.mark.parametrize("variant", ["dnn", "gg-dnn", "gg-rnn"])
def test_untrained_generation_terminates(variant, internet2):
    rng = np.random.default_rng(0)
    m = build_model(variant, internet2, seed=1)
    for _ in range(5):
        s, d = (int(x) for x in rng.choice(12, 2, replace=False))
        path, status = m.generate_path(internet2, request(s, d, (0, 3, 4)))
        assert 1 <= len(path) <= MAX_PATH_LEN
        assert status in set(Status)
        if len(path) == MAX_PATH_LEN and path.steps[-1][0] != d:
            assert status == Status.FAILURE


@pytest.mark.parametrize("capacity, processed", [(50.0, True), (5.0, False)])
def test_generation_respects_capacity(capacity, processed):
    t = make_topology(3, [(0, 1, 1.0), (1, 2, 1.0)], [(1, 0, 2.0, capacity)])
    m = tiny("gg-dnn", t)
    zero_weights(m)
    m.layers[-1][1].data[1] = 5.0       # every candidate asks to process
    path, status = m.generate_path(t, request(0, 2, (0,), bw=10.0))
    assert ((1, True) in path.steps) == processed
    if not processed:
        assert status == Status.FAILURE


def test_baseline_incompatible(internet2):
    m = build_model("dnn", internet2)
    t14 = Topology(14, list(internet2.edges) + [
        type(internet2.edges[0])(12, 0, 1.0, 100.0), type(internet2.edges[0])(13, 12, 1.0, 100.0)],
        internet2.instances, internet2.vnf_types)
    with pytest.raises(IncompatibleTopology, match="topology incompatible with baseline"):
        m.generate_path(t14, request(0, 13))
    with pytest.raises(IncompatibleTopology, match="topology incompatible with baseline"):
        baseline_forward(m, np.zeros(14 * 7 + 14 * 14), (0,), 0, 0, [1, 10])


def test_baseline_zero_input_zero_weights(internet2):
    m = build_model("dnn", internet2)
    zero_weights(m)
    out = baseline_forward(m, np.zeros(12 * 7 + 144), (0,), 0, 1, internet2.neighbors(1))
    nb = list(internet2.neighbors(1))
    np.testing.assert_allclose(out.p_node[nb], 1 / len(nb), rtol=1e-15)
    assert out.p_node.sum() == pytest.approx(1.0)


def test_baseline_deterministic(internet2):
    m = build_model("dnn", internet2, seed=4)
    x = np.random.default_rng(0).random(12 * 7 + 144)
    a = baseline_forward(m, x, (1, 2), 1, 5, [3, 4, 7])
    b = baseline_forward(m, x, (1, 2), 1, 5, [3, 4, 7])
    assert a.scores.tobytes() == b.scores.tobytes()


def test_baseline_forward_matches_decode(internet2):
    m = build_model("dnn", internet2, seed=4)
    r = request(2, 9, (0, 3))
    view, memory = m._memory(internet2, r)
    a = m.decode_step(memory, view, 4, r.chain, 1)[0]
    b = baseline_forward(m, memory, r.chain, 1, 4, view.neighbors[4])
    np.testing.assert_array_equal(a.p_node, b.p_node)


def test_plan_steps(line3):
    m = tiny("gg-dnn", line3)
    r = request(0, 2, (0,))
    plans = plan_steps(m.view(line3), r, SfcPath.of([(0, False), (1, True), (2, False)]))
    assert [p.n_prev for p in plans] == [0, 0, 1]
    assert [p.stage for p in plans] == [0, 0, 1]
    assert [list(p.candidates) for p in plans] == [[0], [1], [0, 2]]
    assert [p.target for p in plans] == [0, 0, 1]
    for bad in ([(0, False), (2, False)], [(1, False), (2, False)], [(0, False), (1, False)],
                [(0, True), (1, False), (2, False)]):
        with pytest.raises(InvalidPath):
            plan_steps(m.view(line3), r, SfcPath.of(bad))


@pytest.mark.parametrize("variant", ["dnn", "gg-dnn", "gg-rnn"])
def test_uniform_model_loss(variant):
    t = k4()
    m = tiny(variant, t)
    zero_weights(m)
    r = request(0, 3, (0,))
    path = SfcPath.of([(0, False), (1, True), (2, False), (3, False)])
    _, rep = m.teacher_forced_loss(t, r, path)
    k = 3
    assert rep.node_ce == pytest.approx(k * math.log(3), rel=1e-14)
    assert rep.proc_ce == pytest.approx((k + 1) * math.log(2), rel=1e-14)
    assert rep.moves == k and rep.steps == k + 1


def test_one_hot_model_loss_is_zero(monkeypatch):
    t = k4()
    m = tiny("gg-dnn", t)
    r = request(0, 3, (0,))
    path = SfcPath.of([(0, False), (1, True), (2, False), (3, False)])
    view = m.view(t)
    plans = plan_steps(view, r, path)
    rows = []
    for p in plans:
        o = np.full((len(p.candidates), 3), -1e3)
        o[p.target, 0] = 1e3
        o[p.target, 1 if p.process else 2] = 1e3
        rows.append(o)
    scores = np.concatenate(rows)
    seg = np.concatenate([np.full(len(p.candidates), i) for i, p in enumerate(plans)])
    monkeypatch.setattr(m, "_score_rows", lambda *a: (ad.Tensor(scores), seg))
    loss, rep = m.teacher_forced_loss(t, r, path)
    assert float(loss.data) == 0.0
    assert rep.correct == rep.moves == 3


@pytest.mark.parametrize("variant", ["dnn", "gg-dnn", "gg-rnn"])
@pytest.mark.parametrize("seed", range(3))
def test_loss_gradient(variant, seed):
    rng = np.random.default_rng(seed)
    t = random_topology(rng, 4, 6, p_host=0.6)
    r = request(0, t.num_nodes - 1, (0, 1))
    sol = solve_optimal(t, r)
    if not sol.feasible:
        r = request(0, t.num_nodes - 1)
        sol = solve_optimal(t, r)
    m = tiny(variant, t, seed=seed, d_vnf=2, hidden=4)
    params = dict(m.store.items())

    def f():
        return m.teacher_forced_loss(t, r, sol.path)[0]
    g = ad.grad(f, params)
    with ad.no_grad():
        num = numeric_grad(lambda: float(f().data), [p.data for p in params.values()])
    for (name, _), n in zip(params.items(), num):
        assert rel_error(g[name], n) <= 1e-5, name


def test_loss_independent_of_order(internet2):
    m = build_model("gg-rnn", internet2, seed=0, **{**TINY, "dropout": 0.1}).eval()
    rs = [request(0, 9, (0,)), request(3, 11, (2, 1))]
    paths = [solve_optimal(internet2, r).path for r in rs]
    a = [m.teacher_forced_loss(internet2, r, p)[1].loss for r, p in zip(rs, paths)]
    b = [m.teacher_forced_loss(internet2, r, p)[1].loss for r, p in zip(rs[::-1], paths[::-1])]
    assert a == b[::-1]


@pytest.mark.parametrize("variant", ["dnn", "gg-dnn", "gg-rnn"])
def test_checkpoint_roundtrip(variant, internet2, tmp_path):
    m = tiny(variant, internet2, seed=7)
    m.save(tmp_path / "m.json")
    back = SfcModel.load(tmp_path / "m.json")
    assert back.cfg == m.cfg
    r = request(1, 8, (0, 3))
    assert back.generate_path(internet2, r)[0] == m.generate_path(internet2, r)[0]
    for (k, p), (k2, q) in zip(m.store.items(), back.store.items()):
        assert k == k2 and p.data.tobytes() == q.data.tobytes()


def test_vnf_catalogue_mismatch(internet2):
    m = tiny("gg-rnn", internet2)
    other = make_topology(3, [(0, 1, 1.0), (1, 2, 1.0)])
    with pytest.raises(IncompatibleTopology):
        m.generate_path(other, request(0, 2))


def test_step_plan_fields():
    p = StepPlan(0, np.array([1, 2]), 1, True, 0)
    assert p.candidates[p.target] == 2
