"""Evaluate trained models on a topology extended by two nodes, without retraining.

The graph models carry over because their weights do not depend on the node
count; the flat baseline reports that it is not applicable.
"""
import json

from gnnsfc.dataset import SimulationConfig, build_dataset
from gnnsfc.training import TopologyPatch, TrainConfig, changed_topology_experiment, train

from _common import bundled_path, bundled_topology

t = bundled_topology()
ds = build_dataset(SimulationConfig(seed=1), t, (300, 30, 100))
models = {v: train(TrainConfig(variant=v, epochs=2, lr=1e-3, seed=1), ds, t).model
          for v in ("dnn", "gg-dnn", "gg-rnn")}
patch = TopologyPatch.from_dict(json.loads(bundled_path("internet2_patch.json").read_text()))
for name, (base, changed) in changed_topology_experiment(models, t, patch, ds.split("test")).items():
    print("base   ", base.table_row())
    print("changed", changed.table_row())
