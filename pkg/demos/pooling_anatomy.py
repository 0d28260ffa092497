"""
Anatomy of a pooling pass
=========================

The selection machinery on a graph small enough to read in full: two
tight 5-node cliques, one bridge edge, and two planted stragglers whose
features sit between the groups. We watch each intermediate — shared
neighbor counts, cluster centers, per-node scores, gates — and see the
stragglers lose.
"""

import numpy as np

from dgen.graph import AttributedGraph, compute_snn
from dgen.pooling import kmeans, ncpool, keep_count

rng = np.random.default_rng(42)

# Two cliques on nodes 0-4 and 5-9, a bridge 4-5, and stragglers 10, 11
# hanging off one clique each by a single edge.
clique_a = [(i, j) for i in range(5) for j in range(i + 1, 5)]
clique_b = [(i, j) for i in range(5, 10) for j in range(i + 1, 10)]
edges = clique_a + clique_b + [(4, 5), (0, 10), (9, 11)]

# Features: group A near (-2, 0), group B near (+2, 0), stragglers at the
# midpoint where neither cluster wants them.
feats = np.vstack([
    rng.normal([-2.0, 0.0], 0.25, size=(5, 2)),
    rng.normal([+2.0, 0.0], 0.25, size=(5, 2)),
    rng.normal([0.0, 0.0], 0.25, size=(2, 2)),
])
g = AttributedGraph(12, edges, feats)
print(f"graph: {g.num_nodes} nodes, {g.num_edges} edges")

# Shared-neighbor counts decide who each node's "closest" neighbor is.
# Inside a 5-clique every adjacent pair shares the other 3 members.
snn = compute_snn(g)
print()
print("shared-neighbor table (adjacent pairs only):")
for (i, j), c in sorted(snn.similarity.items()):
    if c > 0:
        print(f"  ({i:2d},{j:2d}) share {c} neighbors")
print("nearest neighbor per node:", snn.nearest_neighbor.tolist())

# Cluster the feature rows; the centers land on the two group means.
km = kmeans(g.features, 2, seed=0)
print()
print("k-means centers:")
print(np.round(km.centers, 3))

# Score = own squared distance to the nearest center, plus the same for
# the shared-neighbor nearest neighbor. Stragglers sit far from both
# centers AND their only neighbor is in a far-away clique, so both terms
# punish them.
pooled = ncpool(g.features, g, k=0.8, km=km, snn=snn)
print()
print(f"keeping ceil(0.8 * 12) = {keep_count(0.8, 12)} nodes")
print()
print("node  score   gate    kept")
score_by_node = {int(n): (s, gt) for n, s, gt in
                 zip(pooled.selected, pooled.scores, np.ravel(pooled.gates))}
for node in range(g.num_nodes):
    if node in score_by_node:
        s, gt = score_by_node[node]
        print(f"{node:4d}  {s:6.3f}  {gt:.4f}  yes")
    else:
        print(f"{node:4d}       -       -  no")

dropped = sorted(set(range(g.num_nodes)) - set(pooled.selected.tolist()))
print()
print(f"dropped nodes: {dropped}")
assert dropped == [10, 11], "the stragglers should be the ones cut"

# The induced subgraph keeps only edges between survivors, so the
# straggler spokes vanish and the two cliques plus bridge remain.
kept_edges = pooled.edge_pairs()
print(f"induced subgraph: {pooled.num_nodes} nodes, {len(kept_edges)} edges")
assert len(kept_edges) == len(clique_a) + len(clique_b) + 1

# Gates shrink with distance from the centers: clique members sit close
# to their center (gate near 1), bridge endpoints a bit further out.
gates = np.ravel(pooled.gates)
print(f"gate range: {gates.min():.4f} .. {gates.max():.4f} (all in (0, 1])")
assert np.all(gates > 0) and np.all(gates <= 1)

print()
print("ok: the score keeps cluster cores and cuts poorly-attached nodes")
