"""Four-phase training pipeline.

Phase 1 pretrains the global attention encoder to reconstruct the full
adjacency. Phase 2 is the joint self-optimizing stage: the pretrained
global embedding flows through pooling into the local encoder, and the
pooled adjacency reconstruction plus the KL self-training term drive one
optimizer step per epoch over the local encoder and the cluster centers.
Phase 3 clusters the surviving nodes' embeddings. Phase 4 fits an
attention classifier on those cluster labels (loss on survivors only,
attention over the whole graph) and labels every node.

Determinism: one integer seed fans out through named substreams, so a
fixed config and seed reproduce every decision bit-for-bit on a platform.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import ContractError, DegenerateLabelsError, NumericalError
from .graph import AttributedGraph, compute_snn
from .layers import classify_forward, encode, make_classifier, make_encoder
from .losses import (
    ClusterState,
    clustering_loss,
    reconstruct,
    reconstruction_loss,
    soft_assign,
    target_distribution,
    total_loss,
)
from .metrics import accuracy, ari, nmi
from .pooling import identity_pool, kmeans_best, ncpool, topk_pool_baseline

POOL_MODES = ("ncpool", "topk", "none")


@dataclass
class TrainConfig:
    ratio: float = 0.6
    lam: float = 10.0
    pretrain_epochs: int = 200
    train_epochs: int = 200
    classifier_epochs: int = 100
    lr_pretrain: float = 5e-3
    lr_train: float = 5e-3
    lr_classifier: float = 1e-2
    seed: int = 0
    center_refresh_interval: int = 20
    target_refresh_interval: int = 5
    num_clusters: int = 0  # 0: take the ground-truth class count
    pool: str = "ncpool"
    hidden: int = 256
    emb_dim: int = 16
    heads: int = 4

    def validate(self):
        if not 0.0 < self.ratio <= 1.0:
            raise ContractError(f"ratio must be in (0, 1], got {self.ratio}")
        if self.lam < 0:
            raise ContractError(f"lambda must be non-negative, got {self.lam}")
        for name in ("pretrain_epochs", "train_epochs", "classifier_epochs",
                     "center_refresh_interval", "target_refresh_interval",
                     "hidden", "emb_dim", "heads"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        for name in ("lr_pretrain", "lr_train", "lr_classifier"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.num_clusters < 0:
            raise ContractError("num_clusters cannot be negative")
        if self.pool not in POOL_MODES:
            raise ContractError(f"pool must be one of {POOL_MODES}, got {self.pool!r}")

    def resolve_clusters(self, g: AttributedGraph) -> int:
        if self.num_clusters > 0:
            return self.num_clusters
        if g.labels is not None and g.num_classes >= 1:
            return g.num_classes
        raise ContractError("no ground-truth labels: pass an explicit cluster count")


@dataclass
class RunReport:
    labels: np.ndarray
    selected: np.ndarray
    embedding: np.ndarray
    embedding_ids: list
    loss_curves: dict
    timings: dict
    warnings: list
    acc: float = None
    nmi: float = None
    ari: float = None
    config: TrainConfig = None

    def validate(self, n):
        if self.labels.shape != (n,):
            raise ContractError("report labels must cover every node exactly once")


def _rngs_for(seed):
    """Named substreams; adding a name never perturbs the existing ones."""
    ss = np.random.SeedSequence(seed)
    names = ("global", "local", "clf", "mu", "pool", "local_cluster", "proj")
    return dict(zip(names, ss.spawn(len(names))))


def _check_finite(phase, epoch, value):
    if not np.isfinite(value):
        raise NumericalError(f"{phase} epoch {epoch}: non-finite loss {value}")


# ---------------------------------------------------------------------------
# phase 1


def pretrain(g: AttributedGraph, config: TrainConfig, rng_seed):
    """Fit the global encoder to reconstruct the full adjacency."""
    enc = make_encoder(g.feature_dim, config.hidden, config.emb_dim,
                       config.heads, "global", np.random.default_rng(rng_seed))
    a_full = g.adjacency.astype(np.float64)
    opt = T.Adam(enc.params(), lr=config.lr_pretrain)
    losses = []
    for epoch in range(config.pretrain_epochs):
        T.zero_grads(enc.params())
        with T.Tape() as tape:
            h_g = encode(enc, g)
            loss = reconstruction_loss(reconstruct(h_g), a_full)
            value = float(loss.value[0, 0])
            _check_finite("pretrain", epoch, value)
            tape.backward(loss)
        opt.step()
        losses.append(value)
    return enc, losses


# ---------------------------------------------------------------------------
# phase 2


def _pool_once(mode, h_g, g, config, km_pool, snn, proj):
    if mode == "ncpool":
        return ncpool(h_g, g, config.ratio, km_pool, snn)
    if mode == "topk":
        return topk_pool_baseline(h_g, g, config.ratio, proj)
    return identity_pool(h_g, g)


class CollapseMonitor:
    """Warns once when some cluster's soft mass stays under 1/(10C) for
    `patience` consecutive checks. The run keeps going either way."""

    def __init__(self, c, patience=10):
        self.threshold = 1.0 / (10.0 * c)
        self.patience = patience
        self.streak = 0
        self.reported = False

    def check(self, q):
        mass = q.sum(axis=0) / q.shape[0]
        self.streak = self.streak + 1 if np.any(mass < self.threshold) else 0
        if self.streak >= self.patience and not self.reported:
            self.reported = True
            return (f"cluster collapse: soft mass below {self.threshold:.6g} "
                    f"for {self.patience} consecutive target refreshes")
        return None


def _warmup_epochs(train_epochs):
    """Reconstruction-only steps taken before the cluster centers are fit."""
    return min(50, max(5, train_epochs // 4))


def train_dgen(g: AttributedGraph, config: TrainConfig, global_enc, rngs):
    """Joint self-optimizing phase. Returns the final local embedding, the
    final pooled graph, cluster state, the local encoder, the per-epoch
    total losses, and any warnings.

    This phase adapts the local encoder and the trainable cluster centers;
    the global encoder keeps its pretrained weights. Letting reconstruction
    gradients keep moving the global embedding would drag it away from the
    pooling centers fitted to it, shrinking every gate and reshuffling the
    selection at each center refresh, which destroys the structure the
    pretraining just found.

    The centers themselves are seeded by K-means on the local embedding
    after a short reconstruction-only warmup, so they start on a
    representation that already reflects the subgraph rather than on the
    random initialization of the local encoder.
    """
    c = config.resolve_clusters(g)
    mode = config.pool
    snn = compute_snn(g) if mode == "ncpool" else None
    ss_pool = rngs["pool"]
    proj = None
    if mode == "topk":
        v = np.random.default_rng(rngs["proj"]).standard_normal(config.emb_dim)
        proj = v / np.linalg.norm(v)

    local_enc = make_encoder(config.emb_dim, config.hidden, config.emb_dim,
                             config.heads, "local",
                             np.random.default_rng(rngs["local"]))

    # initial pass, off the tape: fit the pooling centers and pool once
    h0 = encode(global_enc, g).value
    km_pool = (kmeans_best(h0, c, seed=ss_pool.spawn(1)[0])
               if mode == "ncpool" else None)
    pooled0 = _pool_once(mode, h0, g, config, km_pool, snn, proj)

    # Settle the local encoder on reconstruction alone before fitting the
    # trainable centers. A fresh random encoder emits a near-collapsed
    # cloud, so K-means on its output would fit noise and the KL term
    # would then harden that arbitrary partition as the embedding expands.
    warm_params = local_enc.params()
    warm_opt = T.Adam(warm_params, lr=config.lr_train)
    for epoch in range(_warmup_epochs(config.train_epochs)):
        T.zero_grads(warm_params)
        with T.Tape() as tape:
            z = encode(local_enc, pooled0)
            l_r = reconstruction_loss(reconstruct(z),
                                      pooled0.adjacency.astype(np.float64))
            _check_finite("warmup", epoch, float(l_r.value[0, 0]))
            tape.backward(l_r)
        warm_opt.step()

    z0 = encode(local_enc, pooled0).value
    km_mu = kmeans_best(z0, c, seed=rngs["mu"])
    state = ClusterState(mu=T.parameter(km_mu.centers, name="mu"))

    # the global weights receive no updates, so H_g is a constant
    h_g = T.constant(h0)
    params = local_enc.params() + [state.mu]
    opt = T.Adam(params, lr=config.lr_train)

    losses = []
    warnings = []
    p_const = None
    p_selection = None
    monitor = CollapseMonitor(c)

    for epoch in range(config.train_epochs):
        T.zero_grads(params)
        with T.Tape() as tape:
            if mode == "ncpool" and epoch % config.center_refresh_interval == 0:
                km_pool = kmeans_best(h_g.value, c, seed=ss_pool.spawn(1)[0])
            pooled = _pool_once(mode, h_g, g, config, km_pool, snn, proj)
            z = encode(local_enc, pooled)
            l_r = reconstruction_loss(reconstruct(z),
                                      pooled.adjacency.astype(np.float64))
            q = soft_assign(z, state.mu)
            state.q = q.value

            # a stale target over a changed node set would misalign rows,
            # so selection changes force a refresh alongside the cadence
            selection = pooled.selected.tobytes()
            if (p_const is None or selection != p_selection
                    or epoch % config.target_refresh_interval == 0):
                p_const = target_distribution(q.value)
                p_selection = selection
                note = monitor.check(q.value)
                if note:
                    warnings.append(f"{note} (epoch {epoch})")
            state.p = p_const

            l_c = clustering_loss(p_const, q)
            loss = total_loss(l_r, l_c, config.lam)
            value = float(loss.value[0, 0])
            _check_finite("train", epoch, value)
            tape.backward(loss)
        opt.step()
        losses.append(value)

    # final state with the trained weights, off the tape
    pooled = _pool_once(mode, h_g.value, g, config, km_pool, snn, proj)
    z = encode(local_enc, pooled)
    state.refresh_q(z.value)
    return z, pooled, state, local_enc, losses, warnings


# ---------------------------------------------------------------------------
# phases 3 and 4


def local_cluster(z, c, seed) -> np.ndarray:
    """K-means labels for the surviving nodes' embeddings."""
    zv = z.value if isinstance(z, T.Tensor) else np.asarray(z, dtype=np.float64)
    if zv.size == 0:
        raise ContractError("empty embedding")
    return kmeans_best(zv, c, seed=seed).assignments


def _softmax_columns(logits_t):
    """Row-stochastic softmax of an (n, C) Tensor via the transposed layout."""
    cols = T.transpose(logits_t)  # C x n
    seg = np.zeros(cols.shape[0], dtype=np.intp)
    return T.softmax_over_segments(cols, seg, 1)  # column-stochastic C x n


def train_classifier(g: AttributedGraph, selected_idx, labels, config: TrainConfig,
                     rng_seed, num_clusters=None):
    """Cross-entropy on the selected nodes only; attention over the full
    graph so the classifier can later label every node."""
    idx = np.asarray(selected_idx, dtype=np.intp)
    y = np.asarray(labels, dtype=np.intp)
    if idx.shape[0] != y.shape[0]:
        raise ContractError("need one label per selected node")
    if np.unique(y).size < 2:
        raise DegenerateLabelsError(
            "selected-node labels collapse to a single class")
    c = num_clusters or (config.resolve_clusters(g)
                         if (config.num_clusters or g.labels is not None)
                         else int(y.max()) + 1)
    c = max(c, int(y.max()) + 1)

    clf = make_classifier(g.feature_dim, config.hidden, c, config.heads,
                          "clf", np.random.default_rng(rng_seed))
    opt = T.Adam(clf.params(), lr=config.lr_classifier)

    onehot = np.zeros((c, idx.shape[0]))
    onehot[y, np.arange(idx.shape[0])] = 1.0

    losses = []
    best = np.inf
    stale = 0
    for epoch in range(config.classifier_epochs):
        T.zero_grads(clf.params())
        with T.Tape() as tape:
            logits = classify_forward(clf, g)
            probs = _softmax_columns(T.gather_rows(logits, idx))  # C x S
            picked = T.elementwise_mul(T.constant(onehot),
                                       T.log(T.clip(probs, 1e-300, None)))
            loss = T.scale(T.sum(picked), -1.0 / idx.shape[0])
            value = float(loss.value[0, 0])
            _check_finite("classifier", epoch, value)
            tape.backward(loss)
        opt.step()
        losses.append(value)
        if value < best - 1e-6:
            best = value
            stale = 0
        else:
            stale += 1
            if stale >= 20:
                break
    return clf, losses


def predict_all(clf, g: AttributedGraph) -> np.ndarray:
    """Argmax cluster per node; ties resolve to the lowest cluster index."""
    logits = classify_forward(clf, g)
    return np.argmax(logits.value, axis=1).astype(np.intp)


# ---------------------------------------------------------------------------
# orchestration


def run_pipeline(g: AttributedGraph, config: TrainConfig,
                 pretrained=None) -> RunReport:
    """Run all four phases and score the result.

    `pretrained` may carry an `(encoder, loss_curve)` pair from a previous
    `pretrain(g, config, ...)` call with the same data, seed, and encoder
    settings; phase 2 never modifies the global encoder, so sweeps that
    only vary pooling, ratio, or lambda can reuse one pretraining run.
    """
    config.validate()
    c = config.resolve_clusters(g)
    rngs = _rngs_for(config.seed)
    timings = {}

    t0 = time.perf_counter()
    if pretrained is None:
        global_enc, pre_losses = pretrain(g, config, rngs["global"])
    else:
        global_enc, pre_losses = pretrained
        if global_enc.in_dim != g.feature_dim:
            raise ContractError(
                f"pretrained encoder expects {global_enc.in_dim} features, "
                f"graph has {g.feature_dim}")
        pre_losses = list(pre_losses)
    timings["pretrain"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    z, pooled, state, local_enc, train_losses, warnings = train_dgen(
        g, config, global_enc, rngs)
    timings["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sel_labels = local_cluster(z, c, seed=rngs["local_cluster"])
    timings["local_cluster"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    clf, clf_losses = train_classifier(g, pooled.selected, sel_labels, config,
                                       rngs["clf"], num_clusters=c)
    labels = predict_all(clf, g)
    timings["classifier"] = time.perf_counter() - t0

    ids = getattr(g, "node_ids", None) or list(range(g.num_nodes))
    report = RunReport(
        labels=labels,
        selected=pooled.selected.copy(),
        embedding=z.value.copy(),
        embedding_ids=[ids[i] for i in pooled.selected],
        loss_curves={"pretrain": pre_losses, "train": train_losses,
                     "classifier": clf_losses},
        timings=timings,
        warnings=list(warnings),
        config=replace(config),
    )
    if g.labels is not None:
        report.acc = accuracy(labels, g.labels)
        report.nmi = nmi(labels, g.labels)
        report.ari = ari(labels, g.labels)
    report.validate(g.num_nodes)
    return report


def run_ablation(g: AttributedGraph, config: TrainConfig, variants) -> dict:
    """One run per pooling mode, identical seed and schedule.

    Pretraining does not depend on the pooling mode, so it runs once and
    is shared across the variants."""
    for mode in variants:
        if mode not in POOL_MODES:
            raise ContractError(f"unknown pooling mode {mode!r}")
    config.validate()
    shared = pretrain(g, config, _rngs_for(config.seed)["global"])
    out = {}
    for mode in variants:
        out[mode] = run_pipeline(g, replace(config, pool=mode), pretrained=shared)
    return out


# ---------------------------------------------------------------------------
# report serialization


def _config_line(config: TrainConfig) -> str:
    pairs = sorted(vars(config).items())
    return " ".join(f"{k}={v}" for k, v in pairs)


def save_report(report: RunReport, path):
    """Metrics block, warnings, timings, then `loss phase epoch value`."""
    with open(path, "w") as fh:
        if report.config is not None:
            fh.write(f"# config {_config_line(report.config)}\n")
        for name in ("acc", "nmi", "ari"):
            v = getattr(report, name)
            if v is not None:
                fh.write(f"metric {name} {v:.6f}\n")
        for w in report.warnings:
            fh.write(f"warning {w}\n")
        for phase, secs in report.timings.items():
            fh.write(f"timing {phase} {secs:.3f}\n")
        for phase, curve in report.loss_curves.items():
            for epoch, v in enumerate(curve):
                fh.write(f"loss {phase} {epoch} {v:.10g}\n")


def save_label_assignments(report: RunReport, g: AttributedGraph, path):
    ids = getattr(g, "node_ids", None) or list(range(g.num_nodes))
    with open(path, "w") as fh:
        if report.config is not None:
            fh.write(f"# config {_config_line(report.config)}\n")
        for i, y in enumerate(report.labels):
            fh.write(f"{ids[i]} {int(y)}\n")


def save_embedding(report: RunReport, path):
    with open(path, "w") as fh:
        if report.config is not None:
            fh.write(f"# config {_config_line(report.config)}\n")
        for nid, row in zip(report.embedding_ids, report.embedding):
            vals = " ".join(f"{x:.10g}" for x in row)
            fh.write(f"{nid} {vals}\n")
