"""Parameters, layers and the optimiser built on :mod:`gnnsfc.autodiff`."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_FORMAT = "gnnsfc-params"
CHECKPOINT_VERSION = 1


class ParameterStore:
    """Named trainable tensors plus RMSprop running averages."""

    def __init__(self, seed: int = 0):
        self.params: dict[str, Tensor] = {}
        self.rms: dict[str, np.ndarray] = {}
        self.rng = np.random.default_rng(seed)

    def add(self, name: str, shape, init: str = "uniform", fan_in: int | None = None) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        shape = tuple(shape)
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "uniform":
            bound = math.sqrt(1.0 / (fan_in if fan_in is not None else shape[0]))
            data = self.rng.uniform(-bound, bound, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        p = Tensor(data, requires_grad=True)
        self.params[name] = p
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def num_weights(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self.params[k].data = v.copy()

    # checkpoint file -------------------------------------------------
    def to_json(self, header: dict | None = None) -> str:
        body = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "header": header or {},
            "params": {k: {"shape": list(p.shape), "values": p.data.ravel().tolist()}
                       for k, p in self.params.items()},
        }
        return json.dumps(body)

    @staticmethod
    def parse(text: str) -> tuple[dict, dict[str, np.ndarray]]:
        body = json.loads(text)
        if body.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a parameter checkpoint")
        if body.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {body.get('version')}")
        arrays = {k: np.array(v["values"], dtype=np.float64).reshape(v["shape"])
                  for k, v in body["params"].items()}
        return body["header"], arrays

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            raise KeyError("checkpoint parameters do not match the model")
        for k, v in arrays.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data = v.copy()


def rmsprop_step(store: ParameterStore, grads: dict[str, np.ndarray], lr: float,
                 decay: float = 0.9, eps: float = 1e-8) -> ParameterStore:
    """One RMSprop update in place: v <- decay v + (1-decay) g^2; w <- w - lr g / (sqrt(v)+eps)."""
    if set(grads) != set(store.params):
        raise KeyError("gradient keys do not match parameter keys")
    for name, g in grads.items():
        v = store.rms.get(name)
        if v is None:
            v = store.rms[name] = np.zeros_like(g, dtype=np.float64)
        v *= decay
        step = np.multiply(g, g)
        step *= 1.0 - decay
        v += step
        np.sqrt(v, out=step)
        step += eps
        np.divide(g, step, out=step)
        step *= lr
        store.params[name].data -= step
    return store


@dataclass
class GruCell:
    """Gated recurrent unit; input size may differ from the state size."""
    wz: Tensor
    uz: Tensor
    wr: Tensor
    ur: Tensor
    w: Tensor
    u: Tensor
    bz: Tensor | None = None
    br: Tensor | None = None
    b: Tensor | None = None

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, d_in: int, d_state: int,
               bias: bool = True) -> "GruCell":
        mats = {}
        for g in ("z", "r", ""):
            mats["w" + g] = store.add(f"{prefix}.W{g}", (d_in, d_state))
            mats["u" + g] = store.add(f"{prefix}.U{g}", (d_state, d_state))
            if bias:
                mats["b" + g] = store.add(f"{prefix}.b{g}", (d_state,), init="zeros")
        return cls(**mats)

    @property
    def state_size(self) -> int:
        return self.u.shape[0]


def gru_step(p: GruCell, a, h_prev) -> Tensor:
    """GRU update for one or many rows: gates z, r; candidate state; interpolation."""
    a, h_prev = ad.as_tensor(a), ad.as_tensor(h_prev)
    if a.shape[-1] != p.wz.shape[0] or h_prev.shape[-1] != p.state_size:
        raise ValueError(f"GRU shape mismatch: input {a.shape}, state {h_prev.shape}")
    z = ad.sigmoid(ad.linear(a, p.wz, p.bz) + h_prev @ p.uz)
    r = ad.sigmoid(ad.linear(a, p.wr, p.br) + h_prev @ p.ur)
    h_tilde = ad.tanh(ad.linear(a, p.w, p.b) + (r * h_prev) @ p.u)
    return (1.0 - z) * h_prev + z * h_tilde


def positional_encoding(index: int, dim: int) -> np.ndarray:
    """Sinusoidal code: even slots sin(index / 10000^(2i/dim)), odd slots cos(...)."""
    if dim < 2 or dim % 2:
        raise ValueError("positional encoding dimension must be even and >= 2")
    if index < 0:
        raise ValueError("index must be non-negative")
    freq = 10000.0 ** (np.arange(0, dim, 2) / dim)
    pe = np.empty(dim)
    pe[0::2] = np.sin(index / freq)
    pe[1::2] = np.cos(index / freq)
    return pe


def embed_mean(table: Tensor, ids) -> Tensor:
    """Mean of the embedding rows ``ids``."""
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size == 0:
        raise ValueError("cannot pool an empty id list")
    if ids.max() >= table.shape[0] or ids.min() < 0:
        raise IndexError("embedding index out of range")
    if ids.size == 1:
        return table[int(ids[0])]
    return ad.mean(table[ids], axis=0)


def mlp(x: Tensor, layers: list[tuple[Tensor, Tensor]], dropout: float, training: bool,
        rng: np.random.Generator | None) -> Tensor:
    """ReLU hidden layers with dropout; the final pair is a plain affine output."""
    for w, b in layers[:-1]:
        x = ad.dropout(ad.relu(ad.linear(x, w, b)), dropout, training, rng)
    w, b = layers[-1]
    return ad.linear(x, w, b)
