"""Train the three variants briefly and compare them on the test split.

Uses a reduced dataset and schedule so it finishes in a few minutes; the
acceptance suite runs the full-size comparison.
"""
from gnnsfc.dataset import SimulationConfig, build_dataset
from gnnsfc.training import TrainConfig, evaluate, train

from _common import bundled_topology

t = bundled_topology()
ds = build_dataset(SimulationConfig(seed=0), t, (400, 50, 150))
print("method           | cost ratio (var) | fail  | overmax")
for variant in ("dnn", "gg-dnn", "gg-rnn"):
    res = train(TrainConfig(variant=variant, epochs=3, lr=1e-3, seed=0), ds, t)
    last = res.log[-1]
    rep = evaluate(res.model, ds.split("test"), t, name=variant)
    print(rep.table_row(), f"   (val acc {last['val_accuracy']:.3f}, best epoch {res.best_epoch})")
