"""Reverse-mode gradients of the full sequence loss, checked by finite differences.

Builds a small GG-RNN, draws generic parameters, and compares the analytic
gradient of the teacher-forced loss with central differences.
"""
import numpy as np

from gnnsfc import autodiff as ad
from gnnsfc.model import build_model
from gnnsfc.oracle import solve_optimal
from gnnsfc.topology import Request

from _common import bundled_topology

t = bundled_topology()
r = Request(id=0, source=0, destination=7, chain=(0,), bandwidth_demand=1.0,
            max_delay_ms=1e9, arrival_time=0, expiry_time=5)
label = solve_optimal(t, r).path
model = build_model("gg-rnn", t, seed=0, steps=2, d_state=4, d_annotation=4, d_vnf=2,
                    d_node=2, hidden=4, layers=1, dropout=0.0)
rng = np.random.default_rng(0)
for _, p in model.store.items():
    p.data = rng.normal(scale=0.5, size=p.data.shape)
params = dict(model.store.items())


def loss():
    return model.teacher_forced_loss(t, r, label)[0]


analytic = ad.grad(loss, params)
ana, num = [], []
with ad.no_grad():
    for name, p in params.items():
        flat = p.data.reshape(-1)
        for i in rng.choice(flat.size, size=min(5, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + 1e-5
            hi = float(loss().data)
            flat[i] = old - 1e-5
            lo = float(loss().data)
            flat[i] = old
            num.append((hi - lo) / 2e-5)
            ana.append(analytic[name].reshape(-1)[i])
ana, num = np.array(ana), np.array(num)
worst = np.linalg.norm(ana - num) / max(np.linalg.norm(ana), np.linalg.norm(num))
print(f"loss {float(loss().data):.6f}, {model.store.num_weights()} weights")
print(f"relative error over sampled coordinates (norm): {worst:.2e}")
