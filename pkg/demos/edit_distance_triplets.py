"""Exact edit distances on tiny graphs, and the triplet labels built from them."""

import numpy as np

from hap.datagen import ged_exact, make_pair_ground_truth, make_triplets, random_small_graphs
from hap.graph import from_edges

triangle = from_edges(3, [(0, 1), (1, 2), (0, 2)])
path = from_edges(3, [(0, 1), (1, 2)])
res = ged_exact(triangle, path, return_path=True)
print("triangle vs path:", res.cost, "via", res.operations)

rng = np.random.default_rng(2)
graphs = random_small_graphs(8, 6, rng)
table = make_pair_ground_truth(graphs)
print("pairwise edit distances:\n", table.astype(int))

for t in make_triplets(len(graphs), table, 5, rng):
    closer = "g2" if t.r < 0 else "g3" if t.r > 0 else "neither"
    print(f"anchor {t.g1}, g2={t.g2}, g3={t.g3}: r={t.r:+.0f}, closer to anchor: {closer}")
