import numpy as np
import pytest

from gnnsfc import autodiff as ad
from gnnsfc.autodiff import Tensor

from gradcheck import numeric_grad, rel_error

TOL = 1e-5


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def check(build, leaves):
    """Compare reverse-mode gradients of the scalar ``build()`` against finite differences."""
    for x in leaves:
        x.zero_grad()
    out = build()
    out.backward()
    analytic = [x.grad if x.grad is not None else np.zeros_like(x.data) for x in leaves]
    with ad.no_grad():
        numeric = numeric_grad(lambda: float(build().data), [x.data for x in leaves])
    for a, n in zip(analytic, numeric):
        assert rel_error(a, n) <= TOL, (a, n)


def project(rng, y):
    """Reduce to a scalar with random weights so every output entry matters."""
    w = rng.normal(size=y.shape)
    return ad.sum_(ad.mul(y, w))


PRIMITIVES = {
    "add_bias": lambda rng, a, b: ad.add(a, b[0]),
    "sub": lambda rng, a, b: ad.sub(a, b),
    "mul": lambda rng, a, b: ad.mul(a, b),
    "matmul": lambda rng, a, b: ad.matmul(a, ad.reshape(b, (4, 3))),
    "linear": lambda rng, a, b: ad.linear(a, ad.reshape(b, (4, 3)), b[0, :3]),
    "sigmoid": lambda rng, a, b: ad.sigmoid(a),
    "tanh": lambda rng, a, b: ad.tanh(a),
    "relu": lambda rng, a, b: ad.relu(a),
    "exp": lambda rng, a, b: ad.exp(a),
    "log": lambda rng, a, b: ad.log(ad.mul(a, a) + 1.0),
    "concat": lambda rng, a, b: ad.concat([a, b], axis=1),
    "index_rows": lambda rng, a, b: a[np.array([2, 0, 2])],
    "slice": lambda rng, a, b: a[:, 1:3],
    "sum_axis": lambda rng, a, b: ad.sum_(a, axis=0),
    "mean": lambda rng, a, b: ad.mean(a, axis=1),
    "repeat_rows": lambda rng, a, b: ad.repeat_rows(a[1], 5),
    "softmax": lambda rng, a, b: ad.softmax(a, axis=1),
    "log_softmax": lambda rng, a, b: ad.log_softmax(a, axis=1),
    "masked_softmax": lambda rng, a, b: ad.masked_softmax(
        ad.reshape(a, (12,)), np.arange(12) % 3 != 1),
    "segment_log_softmax": lambda rng, a, b: ad.segment_log_softmax(
        ad.reshape(a, (12,)), np.array([0, 0, 1, 1, 1, 2, 2, 2, 2, 3, 3, 1]), 4),
    "cross_entropy": lambda rng, a, b: ad.cross_entropy(ad.softmax(ad.reshape(a, (12,))), 5),
    "neighbor_sum": lambda rng, a, b: ad.neighbor_sum(
        a, np.array([[1, 2], [0, 0], [0, 1]]), np.array([[0.3, 0.7], [1.0, 0.0], [0.5, 0.5]])),
    "dropout_mask": lambda rng, a, b: ad.dropout(a, 0.3, True, np.random.default_rng(7)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", range(5))
def test_primitive_gradients(name, seed):
    rng = np.random.default_rng(seed)
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    wrng_seed = int(rng.integers(1 << 30))
    op = PRIMITIVES[name]

    def build():
        return project(np.random.default_rng(wrng_seed), op(rng, a, b))
    check(build, [a, b])


def test_square():
    x = Tensor(3.0, requires_grad=True)
    g = ad.grad(lambda: ad.mul(x, x), {"x": x})
    assert g["x"] == 6.0


def test_sum_of_softmax_has_zero_gradient(rng):
    v = leaf(rng, 6)
    g = ad.grad(lambda: ad.sum_(ad.softmax(v)), {"v": v})
    np.testing.assert_allclose(g["v"], 0.0, atol=1e-15)


def test_disconnected_parameter_gets_zero(rng):
    a, b = leaf(rng, 3), leaf(rng, 3)
    g = ad.grad(lambda: ad.sum_(a), {"a": a, "b": b})
    np.testing.assert_array_equal(g["b"], 0)


def test_non_scalar_loss_rejected(rng):
    a = leaf(rng, 3)
    with pytest.raises(ValueError):
        ad.grad(lambda: ad.mul(a, 2.0), {"a": a})


@pytest.mark.parametrize("seed", range(10))
def test_mlp_gradient(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(5, 6))
    ws = [leaf(rng, 6, 8), leaf(rng, 8, 8), leaf(rng, 8, 2)]
    bs = [leaf(rng, 8), leaf(rng, 8), leaf(rng, 2)]
    target = rng.integers(2, size=5)

    def build():
        h = x
        for i, (w, b) in enumerate(zip(ws, bs)):
            h = ad.linear(h, w, b)
            if i < 2:
                h = ad.tanh(h) if i == 0 else ad.relu(h)
        lsm = ad.log_softmax(h, axis=1)
        return -ad.sum_(lsm[np.arange(5), target])
    check(build, ws + bs)


def test_masked_softmax_examples():
    p = ad.masked_softmax(np.array([3.0, -2.0, 5.0]), np.array([False, True, False])).data
    np.testing.assert_array_equal(p, [0, 1, 0])
    p = ad.masked_softmax(np.array([0.7, 0.7, 0.7, 0.7]), np.array([True, True, False, True])).data
    np.testing.assert_allclose(p, [1 / 3, 1 / 3, 0, 1 / 3], rtol=1e-15)
    assert p[2] == 0.0


def test_masked_softmax_stability():
    p = ad.masked_softmax(np.array([1000.0, 999.0]), np.array([True, True])).data
    assert np.all(np.isfinite(p))
    # log-domain reference: log p0 - log p1 = 1
    assert np.log(p[0]) - np.log(p[1]) == pytest.approx(1.0, rel=1e-12)
    assert p[0] / p[1] == pytest.approx(np.e, rel=1e-12)


def test_masked_softmax_requires_support():
    with pytest.raises(ValueError):
        ad.masked_softmax(np.zeros(3), np.zeros(3, dtype=bool))


def test_cross_entropy_values():
    assert float(ad.cross_entropy(np.array([1.0, 0.0]), 0).data) == 0.0
    assert float(ad.cross_entropy(np.full(4, 0.25), 2).data) == pytest.approx(np.log(4), rel=1e-15)
    big = float(ad.cross_entropy(np.array([1.0, 0.0]), 1).data)
    assert np.isfinite(big) and big == pytest.approx(-np.log(1e-12))


def test_dropout():
    x = Tensor(np.ones((50, 40)))
    assert ad.dropout(x, 0.0, True, np.random.default_rng(0)) is x
    assert ad.dropout(x, 0.5, False, None) is x
    y = ad.dropout(x, 0.25, True, np.random.default_rng(0)).data
    assert set(np.unique(y)) <= {0.0, 1 / 0.75}
    assert 0.15 < (y == 0).mean() < 0.35
    y2 = ad.dropout(x, 0.25, True, np.random.default_rng(0)).data
    np.testing.assert_array_equal(y, y2)
    with pytest.raises(ValueError):
        ad.dropout(x, 1.0, True, np.random.default_rng(0))


def test_neighbor_sum_matches_matrix_product(rng):
    h = rng.normal(size=(4, 3))
    adj = np.zeros((4, 4))
    nbrs = [[1, 2], [0], [0, 3], [2]]
    for u, nb in enumerate(nbrs):
        for v in nb:
            adj[v, u] = rng.random()
    idx = np.zeros((4, 2), dtype=int)
    w = np.zeros((4, 2))
    for u, nb in enumerate(nbrs):
        idx[u, :len(nb)] = nb
        w[u, :len(nb)] = adj[nb, u]
    out = ad.neighbor_sum(Tensor(h), idx, w).data
    np.testing.assert_allclose(out, adj.T @ h, rtol=1e-14)


def test_no_grad_records_nothing(rng):
    a = leaf(rng, 3)
    with ad.no_grad():
        y = ad.mul(a, 2.0)
    assert not y.requires_grad and y._parents == ()
