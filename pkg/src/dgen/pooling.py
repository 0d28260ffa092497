"""Neighbor-cluster pooling and its baselines.

Nodes are scored by how tightly they and their strongest shared-neighbor
sit around the nearest K-means center; the best-fitting ceil(k*N) nodes
survive, their embedding rows are damped by an affinity gate, and the
adjacency is induced on the survivors. A projection-based top-k pool and
an identity pool stand in as comparison points.

Scores, centers, gates, and index sets are gradient-constants: when the
embedding argument is an autodiff Tensor, gradients reach it only through
the row-gather and the constant gating product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericalError
from .graph import AttributedGraph, SnnTable


def _values(h):
    return h.value if isinstance(h, T.Tensor) else np.asarray(h, dtype=np.float64)


def keep_count(k, n) -> int:
    """ceil(k*n) with a guard against float dust (0.6*300 must be 180)."""
    if not 0.0 < k <= 1.0:
        raise ContractError(f"keep ratio must be in (0, 1], got {k}")
    return min(int(math.ceil(round(k * n, 9))), n)


# ---------------------------------------------------------------------------
# K-means engine


@dataclass
class KmeansModel:
    centers: np.ndarray  # c x dim
    assignments: np.ndarray  # per point, index of its nearest center
    inertia: float
    n_iter: int

    def nearest_center(self, points):
        """(index, squared distance) of the closest center per point."""
        d2 = _sq_dists(np.asarray(points, dtype=np.float64), self.centers)
        idx = np.argmin(d2, axis=1).astype(np.intp)
        return idx, d2[np.arange(d2.shape[0]), idx]


def _sq_dists(x, c):
    d2 = (np.sum(x * x, axis=1)[:, None]
          - 2.0 * (x @ c.T)
          + np.sum(c * c, axis=1)[None, :])
    return np.maximum(d2, 0.0)


def kmeans(points, c, seed, max_iter=100, tol=1e-6) -> KmeansModel:
    """Lloyd iterations from careful seeding; deterministic per seed.

    Seeding picks the first center uniformly and the rest proportionally
    to squared distance from the chosen set. A cluster that loses all its
    points is reseeded to the point farthest from its current center.
    Within-cluster scatter is checked to be non-increasing every iteration.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError("points must be a 2-D matrix")
    n = x.shape[0]
    c = int(c)
    if not 1 <= c <= n:
        raise ContractError(f"cluster count must be in [1, {n}], got {c}")

    rng = np.random.default_rng(seed)
    centers = _seed_centers(x, c, rng)

    prev_inertia = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(x, centers)
        assign = np.argmin(d2, axis=1).astype(np.intp)
        mind2 = d2[np.arange(n), assign]

        counts = np.bincount(assign, minlength=c)
        for j in np.nonzero(counts == 0)[0]:
            far = int(np.argmax(mind2))
            centers[j] = x[far]
            assign[far] = j
            mind2[far] = 0.0

        inertia = float(mind2.sum())
        if inertia > prev_inertia + 1e-8 * max(1.0, prev_inertia):
            raise NumericalError(
                f"k-means scatter increased: {prev_inertia} -> {inertia}")
        prev_inertia = inertia

        new_centers = centers.copy()
        for j in range(c):
            members = assign == j
            if members.any():
                new_centers[j] = x[members].mean(axis=0)
        shift = float(np.sqrt(np.sum((new_centers - centers) ** 2, axis=1)).max())
        centers = new_centers
        if shift < tol:
            break

    d2 = _sq_dists(x, centers)
    assign = np.argmin(d2, axis=1).astype(np.intp)
    inertia = float(d2[np.arange(n), assign].sum())
    return KmeansModel(centers=centers, assignments=assign,
                       inertia=inertia, n_iter=it)


def kmeans_best(points, c, seed, restarts=10, max_iter=100, tol=1e-6) -> KmeansModel:
    """Best of several independently seeded runs, by inertia.

    Lloyd's algorithm only finds a local optimum, so center fits that feed
    training decisions take the lowest-scatter solution out of `restarts`
    deterministic attempts. Ties keep the earliest run.
    """
    if restarts < 1:
        raise ContractError(f"restarts must be positive, got {restarts}")
    base = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    best = None
    for child in base.spawn(restarts):
        model = kmeans(points, c, seed=child, max_iter=max_iter, tol=tol)
        if best is None or model.inertia < best.inertia:
            best = model
    return best


def _seed_centers(x, c, rng):
    n = x.shape[0]
    centers = np.empty((c, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = _sq_dists(x, centers[:1])[:, 0]
    for j in range(1, c):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            pick = rng.choice(n, p=probs)
        else:  # all remaining mass at chosen points; fall back to uniform
            pick = rng.integers(n)
        centers[j] = x[pick]
        d2 = np.minimum(d2, _sq_dists(x, centers[j:j + 1])[:, 0])
    return centers


# ---------------------------------------------------------------------------
# node scoring


def node_scores(h, km: KmeansModel, snn: SnnTable) -> np.ndarray:
    """Per-node pooling score: own plus strongest-neighbor squared distance,
    both measured to the node's own nearest center.

    Isolated nodes are their own neighbor, so their distance doubles.
    Returned as plain numbers; scores never carry gradients.
    """
    hv = _values(h)
    n = hv.shape[0]
    if snn.nearest_neighbor.shape[0] != n:
        raise ContractError("neighbor table does not cover the embedding rows")
    own_center, _ = km.nearest_center(hv)
    # both distances go through the same float path so that mutual nearest
    # neighbors on a shared center score bitwise-equal and the index
    # tiebreak actually decides, instead of last-ulp rounding noise
    own = hv - km.centers[own_center]
    own_d2 = np.sum(own * own, axis=1)
    nn = snn.nearest_neighbor
    diff = hv[nn] - km.centers[own_center]
    neighbor_d2 = np.sum(diff * diff, axis=1)
    return own_d2 + neighbor_d2


# ---------------------------------------------------------------------------
# pooled result


@dataclass
class PooledGraph:
    """Survivors of one pooling pass over a graph's embeddings."""

    selected: np.ndarray  # original node ids, selection order
    features: object  # gated rows, Tensor or ndarray matching the input
    adjacency: np.ndarray  # induced on selected, uint8
    scores: np.ndarray  # raw score per selected node
    gates: np.ndarray  # multiplier applied to each selected row

    @property
    def num_nodes(self):
        return int(self.selected.shape[0])

    def edge_pairs(self) -> np.ndarray:
        """Undirected (i, j) pairs of the induced adjacency, i < j."""
        iu, ju = np.nonzero(np.triu(self.adjacency, k=1))
        return np.stack([iu, ju], axis=1).astype(np.intp)


def _gate_rows(h, idx, gates):
    col = gates.reshape(-1, 1)
    if isinstance(h, T.Tensor):
        return T.elementwise_mul(T.gather_rows(h, idx), T.constant(col))
    return _values(h)[idx] * col


def ncpool(h, g: AttributedGraph, k, km: KmeansModel, snn: SnnTable) -> PooledGraph:
    """Keep the ceil(k*N) smallest-score nodes, gate, induce the subgraph.

    Selection order is ascending score with ties broken by node index. The
    gate 1/(1+S) maps a perfect cluster fit to 1 and decays with distance.
    """
    n = g.num_nodes
    if _values(h).shape[0] != n:
        raise ContractError("embedding row count does not match the graph")
    keep = keep_count(k, n)
    s = node_scores(h, km, snn)
    order = np.lexsort((np.arange(n), s))
    idx = order[:keep].astype(np.intp)
    sel_scores = s[idx]
    gates = 1.0 / (1.0 + sel_scores)
    features = _gate_rows(h, idx, gates)
    adj = g.adjacency[np.ix_(idx, idx)]
    return PooledGraph(selected=idx, features=features, adjacency=adj,
                       scores=sel_scores, gates=gates)


def topk_pool_baseline(h, g: AttributedGraph, k, p) -> PooledGraph:
    """Projection-score pooling: largest y = h@p/|p| win, gates are tanh(y)."""
    n = g.num_nodes
    hv = _values(h)
    if hv.shape[0] != n:
        raise ContractError("embedding row count does not match the graph")
    pv = np.asarray(p, dtype=np.float64).reshape(-1)
    if pv.shape[0] != hv.shape[1]:
        raise ContractError(
            f"projection has {pv.shape[0]} entries for width {hv.shape[1]}")
    norm = float(np.linalg.norm(pv))
    if norm == 0.0:
        raise ContractError("projection vector must be non-zero")
    keep = keep_count(k, n)
    y = hv @ (pv / norm)
    order = np.lexsort((np.arange(n), -y))
    idx = order[:keep].astype(np.intp)
    gates = np.tanh(y[idx])
    features = _gate_rows(h, idx, gates)
    adj = g.adjacency[np.ix_(idx, idx)]
    return PooledGraph(selected=idx, features=features, adjacency=adj,
                       scores=y[idx], gates=gates)


def identity_pool(h, g: AttributedGraph) -> PooledGraph:
    """No-op pooling: every node kept with unit gate, adjacency unchanged."""
    n = g.num_nodes
    idx = np.arange(n, dtype=np.intp)
    features = h if isinstance(h, T.Tensor) else _values(h).copy()
    return PooledGraph(selected=idx, features=features,
                       adjacency=g.adjacency.copy(),
                       scores=np.zeros(n), gates=np.ones(n))
