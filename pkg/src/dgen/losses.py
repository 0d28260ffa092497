"""Training objectives: inner-product adjacency reconstruction with
class-reweighted cross-entropy, Student's-t soft cluster assignments, the
squared-and-renormalized target distribution, their KL divergence, and the
weighted total.

Every loss accepts either plain arrays (evaluation) or autodiff Tensors
(training); the Tensor paths are built purely from recorded primitives so
gradients reach embeddings and trainable centers. Target distributions are
always plain arrays: they are gradient constants by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError

# incremented whenever clustering_loss has to clamp a zero/tiny Q entry
_CLAMP_WARNINGS = 0


def clamp_warning_count() -> int:
    return _CLAMP_WARNINGS


def reset_clamp_warnings():
    global _CLAMP_WARNINGS
    _CLAMP_WARNINGS = 0


def _is_tensor(x):
    return isinstance(x, T.Tensor)


def _values(x):
    return x.value if _is_tensor(x) else np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# reconstruction


def reconstruct(z):
    """Pairwise link probabilities sigmoid(z_i . z_j); symmetric, in (0,1)."""
    if _is_tensor(z):
        return T.sigmoid(T.matmul(z, T.transpose(z)))
    zv = _values(z)
    return 1.0 / (1.0 + np.exp(-np.clip(zv @ zv.T, -500, 500)))


def _bce_weight(a_ref):
    n = a_ref.shape[0]
    ones = float(a_ref.sum())
    zeros = float(n * n) - ones
    # edgeless reference degenerates to unweighted terms
    return zeros / ones if ones > 0 else 1.0


def reconstruction_loss(a_hat, a_ref):
    """Mean cross-entropy between predicted and reference adjacency.

    Present edges are up-weighted by the reference's absent/present ratio
    so sparse graphs do not collapse to all-zero predictions. Self-pairs
    count as present. Predictions are clamped to [1e-7, 1-1e-7] before the
    logs.
    """
    ref = np.asarray(a_ref, dtype=np.float64)
    av = _values(a_hat)
    if ref.shape != av.shape or ref.ndim != 2 or ref.shape[0] != ref.shape[1]:
        raise DimensionError(
            f"adjacency shapes disagree: {av.shape} vs {ref.shape}")
    if not np.all((ref == 0.0) | (ref == 1.0)):
        raise ContractError("reference adjacency must be binary")
    n = ref.shape[0]
    w = _bce_weight(ref)
    t = ref.copy()
    np.fill_diagonal(t, 1.0)
    eps = 1e-7
    if _is_tensor(a_hat):
        ac = T.clip(a_hat, eps, 1.0 - eps)
        pos = T.elementwise_mul(T.constant(w * t), T.log(ac))
        one_minus = T.add_scalar(T.scale(ac, -1.0), 1.0)
        neg = T.elementwise_mul(T.constant(1.0 - t), T.log(one_minus))
        return T.scale(T.sum(T.add(pos, neg)), -1.0 / (n * n))
    ac = np.clip(av, eps, 1.0 - eps)
    terms = w * t * np.log(ac) + (1.0 - t) * np.log(1.0 - ac)
    return float(-terms.sum() / (n * n))


# ---------------------------------------------------------------------------
# soft assignments and targets


def soft_assign(z, mu):
    """Student's-t similarity (one degree of freedom) of each row to each
    center, normalized per row: q_ij = (1+|z_i-mu_j|^2)^-1 / sum_k(...)."""
    mu_v = _values(mu)
    if mu_v.shape[0] < 1:
        raise ContractError("need at least one center")
    if _values(z).shape[1] != mu_v.shape[1]:
        raise DimensionError(
            f"embedding width {_values(z).shape[1]} != center width {mu_v.shape[1]}")
    if _is_tensor(z) or _is_tensor(mu):
        zt = z if _is_tensor(z) else T.constant(z)
        mt = mu if _is_tensor(mu) else T.constant(mu)
        zz = T.rowsum(T.elementwise_mul(zt, zt))  # (n,1)
        mm = T.transpose(T.rowsum(T.elementwise_mul(mt, mt)))  # (1,C)
        cross = T.matmul(zt, T.transpose(mt))  # (n,C)
        d2 = T.add(T.add(T.scale(cross, -2.0), zz), mm)
        inv = T.reciprocal(T.add_scalar(T.clip(d2, 0.0, None), 1.0))
        return T.elementwise_mul(inv, T.reciprocal(T.rowsum(inv)))
    zv = _values(z)
    d2 = np.maximum(
        np.sum(zv * zv, axis=1)[:, None] - 2.0 * zv @ mu_v.T
        + np.sum(mu_v * mu_v, axis=1)[None, :], 0.0)
    inv = 1.0 / (1.0 + d2)
    return inv / inv.sum(axis=1, keepdims=True)


def target_distribution(q) -> np.ndarray:
    """Square the assignments, discount by cluster mass, renormalize rows.

    Always returns a plain array: the target is held fixed while the
    assignments chase it, so it must not carry gradients.
    """
    qv = _values(q)
    if np.any(np.abs(qv.sum(axis=1) - 1.0) > 1e-6):
        raise ContractError("assignment rows must sum to 1")
    f = qv.sum(axis=0)  # soft cluster frequencies
    un = qv * qv / np.maximum(f, 1e-300)[None, :]
    return un / un.sum(axis=1, keepdims=True)


def clustering_loss(p, q):
    """KL(P||Q), treating P as constant. Zero/tiny Q entries are clamped at
    1e-12 and counted in the module warning counter."""
    global _CLAMP_WARNINGS
    pv = np.asarray(_values(p), dtype=np.float64)
    qv = _values(q)
    if pv.shape != qv.shape:
        raise DimensionError(f"P shape {pv.shape} != Q shape {qv.shape}")
    floor = 1e-12
    clamped = int((qv < floor).sum())
    if clamped:
        _CLAMP_WARNINGS += clamped
    # 0 log 0 := 0 on the constant side
    nz = pv > 0.0
    const_term = float(np.sum(pv[nz] * np.log(pv[nz])))
    if _is_tensor(q):
        qc = T.clip(q, floor, None)
        cross = T.sum(T.elementwise_mul(T.constant(pv), T.log(qc)))
        return T.add_scalar(T.scale(cross, -1.0), const_term)
    qc = np.clip(qv, floor, None)
    return const_term - float(np.sum(pv * np.log(qc)))


def total_loss(l_r, l_c, lam):
    """Reconstruction plus lam times clustering."""
    if lam < 0:
        raise ContractError(f"loss weight must be non-negative, got {lam}")
    if _is_tensor(l_r) or _is_tensor(l_c):
        lr = l_r if _is_tensor(l_r) else T.constant([[float(l_r)]])
        lc = l_c if _is_tensor(l_c) else T.constant([[float(l_c)]])
        return T.add(lr, T.scale(lc, float(lam)))
    return float(l_r) + float(lam) * float(l_c)


# ---------------------------------------------------------------------------
# cluster bookkeeping


@dataclass
class ClusterState:
    """Trainable centers plus the most recent assignment and target tables."""

    mu: T.Tensor
    q: np.ndarray = field(default=None)
    p: np.ndarray = field(default=None)

    @property
    def num_clusters(self):
        return self.mu.shape[0]

    @property
    def hard_labels(self) -> np.ndarray:
        if self.q is None:
            raise ContractError("no assignments computed yet")
        return np.argmax(self.q, axis=1).astype(np.intp)

    def refresh_q(self, z):
        self.q = _values(soft_assign(_values(z), self.mu.value))
        return self.q

    def refresh_target(self, z=None):
        if z is not None:
            self.refresh_q(z)
        if self.q is None:
            raise ContractError("no assignments to build a target from")
        self.p = target_distribution(self.q)
        return self.p
