"""Simulate a request stream, label it with the oracle and round-trip the file."""
import tempfile
from pathlib import Path

from gnnsfc.dataset import SimulationConfig, build_dataset, load_dataset, write_dataset

from _common import bundled_topology

t = bundled_topology()
ds = build_dataset(SimulationConfig(seed=0), t, (200, 20, 50))
for split in ("train", "val", "test"):
    samples = ds.split(split)
    print(f"{split:5s}: {len(samples)} samples, arrivals {samples[0].request.arrival_time}"
          f"..{samples[-1].request.arrival_time}")
s = ds.split("train")[0]
print("first sample:", s.request.to_dict())
print("label:", s.label.to_list(), "cost", s.label_cost)

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "dataset.jsonl.gz"
    write_dataset(ds, path)
    again = load_dataset(path, t)
    print("round trip identical:", again.to_bytes() == ds.to_bytes(), f"({path.stat().st_size} bytes)")
