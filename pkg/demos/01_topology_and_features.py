"""Load the bundled 12-node topology and build the model inputs for one request.

Shows the annotation matrix (hosted VNF types plus source and destination
flags) and the normalized adjacency matrix, whose columns each sum to one.
"""
import numpy as np

from gnnsfc.features import build_adjacency, build_annotation, column_stochastic_check
from gnnsfc.topology import Request

from _common import bundled_topology

t = bundled_topology()
print(f"nodes {t.num_nodes}, edges {len(t.edges)}, vnf types {t.vnf_types}")
for u in t.nodes:
    hosted = sorted(t.vnf_types[k] for k in t.hosted_types(u))
    print(f"  node {u:2d}: neighbours {list(t.neighbors(u))}, hosts {hosted}")

chain = (t.type_id("Firewall"), t.type_id("NAT"))
r = Request(id=0, source=0, destination=11, chain=chain, bandwidth_demand=2.0,
            max_delay_ms=100.0, arrival_time=0, expiry_time=10)
ann = build_annotation(t, r)
print("\nannotation matrix (types..., source, destination):")
print(ann.astype(int))

adj = build_adjacency(t)
np.set_printoptions(precision=3, suppress=True, linewidth=140)
print("\nnormalized adjacency:")
print(adj)
print("columns sum to one over neighbours:", column_stochastic_check(adj, t))
