"""
Recovering planted communities in a stochastic block model
==========================================================

End-to-end walk through the clustering pipeline on a synthetic graph
whose ground truth we control: three blocks of 60 nodes, dense inside,
sparse across, with Gaussian features shifted per block.
"""

from dgen.graph import generate_sbm
from dgen.pipeline import TrainConfig, run_pipeline

# Generate the graph. p_in/p_out control edge densities, feature_shift
# controls how far apart the per-block feature means sit.
g = generate_sbm([60, 60, 60], p_in=0.15, p_out=0.01,
                 feature_dim=12, feature_shift=2.0, seed=7)
print(f"graph: {g.num_nodes} nodes, {g.num_edges} edges, "
      f"{g.feature_dim}-dim features, {g.num_classes} classes")

# A deliberately light configuration so the demo finishes in seconds.
cfg = TrainConfig(pretrain_epochs=150, train_epochs=100, classifier_epochs=80,
                  hidden=64, emb_dim=8, heads=2, seed=0)
report = run_pipeline(g, cfg)

print()
print("phase timings (seconds):")
for phase, secs in report.timings.items():
    print(f"  {phase:10s} {secs:6.2f}")

# The pipeline clusters a selected subset, then a classifier extends the
# labels to every node. Metrics compare those labels to the planted blocks.
print()
print(f"selected {report.selected.size} of {g.num_nodes} nodes for clustering")
print(f"accuracy  {report.acc:.4f}")
print(f"NMI       {report.nmi:.4f}")
print(f"ARI       {report.ari:.4f}")

# Peek at a few predictions next to the ground truth. Cluster ids are
# arbitrary; the metrics above already handle the relabelling.
print()
print("node  predicted  true")
for i in [0, 1, 60, 61, 120, 121]:
    print(f"{i:4d}  {report.labels[i]:9d}  {g.labels[i]:4d}")

# Reconstruction loss should fall during pretraining; print the curve
# endpoints as a sanity check. The joint-phase curve is not comparable
# epoch to epoch (its clustering target and node selection are refreshed
# periodically), so we only report its length.
pre = report.loss_curves["pretrain"]
joint = report.loss_curves["train"]
print()
print(f"pretrain loss: {pre[0]:.4f} -> {pre[-1]:.4f} over {len(pre)} epochs")
print(f"joint phase:   {len(joint)} epochs (moving target, curve not monotone)")

assert report.nmi > 0.6, "expected strong recovery on this easy instance"
print()
print("ok: planted structure recovered")
