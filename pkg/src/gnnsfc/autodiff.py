"""Small reverse-mode automatic differentiation engine over numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them. ``Tensor.backward`` walks
the recorded graph in reverse creation order. All values are float64.
"""
from __future__ import annotations

import contextlib
import itertools
import os

import numpy as np

_counter = itertools.count()
CHECK_FINITE = bool(os.environ.get("GNNSFC_CHECK_FINITE"))


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        if CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise NonFiniteError("non-finite value produced in forward pass")
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._id = next(_counter)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray, fresh: bool = False) -> None:
        """Add ``g`` into ``grad``; ``fresh`` arrays are not aliased and may be adopted."""
        if self.grad is None:
            if fresh and g.shape == self.data.shape and g.dtype == np.float64:
                self.grad = g
            else:
                self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        order, seen, stack = [], set(), [self]
        while stack:
            t = stack.pop()
            if t._id in seen:
                continue
            seen.add(t._id)
            order.append(t)
            stack.extend(p for p in t._parents if p.requires_grad)
        order.sort(key=lambda t: t._id, reverse=True)
        self._accum(np.ones_like(self.data))
        for t in order:
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)
                # interior gradients are not needed once propagated
                t.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None):
        return sum_(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _make(data, parents, backward) -> Tensor:
    parents = tuple(p for p in parents if p.requires_grad) if _grad_enabled else ()
    if not parents:
        return Tensor(data)
    return Tensor(data, True, parents, backward)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))
    return _make(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))
    return _make(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))
    return _make(a.data * b.data, (a, b), back)


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)

    def back(g):
        x._accum(g * out * (1.0 - out))
    return _make(out, (x,), back)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def back(g):
        x._accum(g * (1.0 - out * out))
    return _make(out, (x,), back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def back(g):
        x._accum(g * mask)
    return _make(x.data * mask, (x,), back)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def back(g):
        x._accum(g * out)
    return _make(out, (x,), back)


def log(x: Tensor) -> Tensor:
    def back(g):
        x._accum(g / x.data)
    return _make(np.log(x.data), (x,), back)


# -- linear algebra and shape ------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            if b.data.ndim == 1:
                a._accum(np.multiply.outer(g, b.data), fresh=True)
            else:
                a._accum(g @ b.data.T, fresh=True)
        if b.requires_grad:
            if a.data.ndim == 1:
                b._accum(np.multiply.outer(a.data, g), fresh=True)
            else:
                b._accum(a.data.T @ g, fresh=True)
    return _make(a.data @ b.data, (a, b), back)


def linear(x, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` as one graph node; ``x`` is (k, in) or (in,)."""
    x = as_tensor(x)
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def back(g):
        if x.requires_grad:
            x._accum(g @ w.data.T, fresh=True)
        if w.requires_grad:
            w._accum(np.multiply.outer(x.data, g) if x.data.ndim == 1 else x.data.T @ g,
                     fresh=True)
        if b is not None and b.requires_grad:
            b._accum(g if g.ndim == 1 else g.sum(axis=0))
    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, back)


def concat(xs, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for x, part in zip(xs, np.split(g, splits, axis=axis)):
            if x.requires_grad:
                x._accum(part)
    return _make(np.concatenate([x.data for x in xs], axis=axis), xs, back)


def index(x: Tensor, idx) -> Tensor:
    """Basic or integer-array indexing (row gather, slicing)."""
    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        x._accum(full)
    return _make(x.data[idx], (x,), back)


def reshape(x: Tensor, shape) -> Tensor:
    def back(g):
        x._accum(g.reshape(x.shape))
    return _make(x.data.reshape(shape), (x,), back)


def repeat_rows(x: Tensor, k: int) -> Tensor:
    """Stack a vector ``k`` times into a (k, d) matrix."""
    def back(g):
        x._accum(g.sum(axis=0))
    return _make(np.broadcast_to(x.data, (k,) + x.shape).copy(), (x,), back)


def sum_(x: Tensor, axis=None) -> Tensor:
    def back(g):
        if axis is None:
            x._accum(np.broadcast_to(g, x.shape))
        else:
            x._accum(np.broadcast_to(np.expand_dims(g, axis), x.shape))
    return _make(np.sum(x.data, axis=axis), (x,), back)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis), 1.0 / n)


def neighbor_sum(h: Tensor, nbr_idx: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted neighbour aggregation ``a[u] = sum_j weights[u, j] * h[nbr_idx[u, j]]``.

    Padding slots carry weight 0. Per-element terms are summed in sorted order,
    which makes the result independent of how nodes are numbered.
    """
    terms = weights[:, :, None] * h.data[nbr_idx]
    terms.sort(axis=1)
    out = np.zeros(terms.shape[::2])
    for j in range(terms.shape[1]):
        out += terms[:, j, :]

    def back(g):
        full = np.zeros_like(h.data)
        np.add.at(full, nbr_idx, weights[:, :, None] * g[:, None, :])
        h._accum(full)
    return _make(out, (h,), back)


# -- probabilities and losses ------------------------------------------
def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        x._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))
    return _make(out, (x,), back)


def masked_softmax(scores, mask) -> Tensor:
    """Softmax over the ``True`` entries of ``mask``; other entries are exactly 0."""
    scores = as_tensor(scores)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != scores.shape:
        raise ValueError("mask shape must match scores")
    if not mask.any():
        raise ValueError("masked_softmax needs at least one unmasked entry")
    z = np.where(mask, scores.data, -np.inf)
    e = np.where(mask, np.exp(z - z.max()), 0.0)
    out = e / e.sum()

    def back(g):
        scores._accum(out * (g - (g * out).sum()))
    return _make(out, (scores,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def back(g):
        x._accum(g - p * g.sum(axis=axis, keepdims=True))
    return _make(out, (x,), back)


def segment_log_softmax(x: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Log-softmax of a 1-D score vector within each contiguous-or-not segment."""
    seg = np.asarray(segments)
    mx = np.full(num_segments, -np.inf)
    np.maximum.at(mx, seg, x.data)
    z = x.data - mx[seg]
    se = np.zeros(num_segments)
    np.add.at(se, seg, np.exp(z))
    out = z - np.log(se)[seg]
    p = np.exp(out)

    def back(g):
        gs = np.zeros(num_segments)
        np.add.at(gs, seg, g)
        x._accum(g - p * gs[seg])
    return _make(out, (x,), back)


LOG_FLOOR = 1e-12


def cross_entropy(probs, target: int) -> Tensor:
    """``-log p[target]`` with the probability floored at 1e-12."""
    probs = as_tensor(probs)
    p = probs.data[target]
    clamped = max(p, LOG_FLOOR)

    def back(g):
        full = np.zeros_like(probs.data)
        if p >= LOG_FLOOR:
            full[target] = -g / p
        probs._accum(full)
    return _make(np.array(-np.log(clamped)), (probs,), back)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    if not 0 <= rate < 1:
        raise ValueError("dropout rate must lie in [0, 1)")
    if not training or rate == 0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


def grad(fn, params) -> dict[str, np.ndarray]:
    """Gradient of the scalar returned by ``fn()`` w.r.t. every named parameter.

    ``params`` maps names to leaf tensors. Parameters the loss does not touch
    get an all-zero gradient.
    """
    for p in params.values():
        p.zero_grad()
    loss = fn()
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ValueError("loss must be a scalar Tensor")
    loss.backward()
    out = {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
           for name, p in params.items()}
    for p in params.values():
        p.zero_grad()
    return out
