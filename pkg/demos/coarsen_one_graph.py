"""Walk one random graph through a single coarsening module and print what each stage produces."""

import numpy as np

from hap.coarsen import CoarseningLayer, coarsen_forward
from hap.graph import er_random_graph, permute_graph

rng = np.random.default_rng(0)
g = er_random_graph(12, 0.3, rng)
H = rng.normal(size=(g.n, 4))
layer = CoarseningLayer(in_dim=4, n_clusters=3, rng=rng, tau=0.1)

out = coarsen_forward(layer, H, g.adjacency)
M = out.assignment.M.value
print("assignment M (12 nodes -> 3 clusters), row sums:", np.round(M.sum(axis=1), 12))
print("cluster mass (column sums of M):", np.round(M.sum(axis=0), 3))
print("coarsened adjacency M^T A M:\n", np.round(out.A.value, 3))
print("soft-sampled adjacency (noise off):\n", np.round(out.A_sampled.value, 3))

# the same graph with its nodes relabelled gives the same coarse graph
perm = rng.permutation(g.n)
h = permute_graph(g, perm)
again = coarsen_forward(layer, H[perm], h.adjacency)
print("max change under relabelling:", np.max(np.abs(again.H.value - out.H.value)))

# a lower temperature pushes sampled rows towards one-hot
for tau in (1.0, 0.1, 0.01):
    layer.tau = tau
    rows = coarsen_forward(layer, H, g.adjacency).A_sampled.value
    print(f"tau={tau:<5} largest entry per row: {np.round(rows.max(axis=1), 3)}")
