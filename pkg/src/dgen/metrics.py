"""Clustering quality scores: matched accuracy, normalized mutual
information, adjusted Rand index.

All three are invariant to relabeling either argument. Predicted and true
labels may use arbitrary integer ids; everything runs off the contingency
table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError


@dataclass
class ContingencyTable:
    """Joint cluster/class counts with marginals."""

    counts: np.ndarray  # C_pred x C_true
    row_marginals: np.ndarray  # per predicted cluster
    col_marginals: np.ndarray  # per true class
    n: int

    @classmethod
    def from_labels(cls, pred, truth) -> "ContingencyTable":
        p = np.asarray(pred).reshape(-1)
        t = np.asarray(truth).reshape(-1)
        if p.shape[0] != t.shape[0]:
            raise ContractError(
                f"label arrays differ in length: {p.shape[0]} vs {t.shape[0]}")
        if p.shape[0] == 0:
            raise ContractError("label arrays are empty")
        _, pi = np.unique(p, return_inverse=True)
        _, ti = np.unique(t, return_inverse=True)
        counts = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
        np.add.at(counts, (pi, ti), 1)
        return cls(counts=counts,
                   row_marginals=counts.sum(axis=1),
                   col_marginals=counts.sum(axis=0),
                   n=p.shape[0])

    def is_identical_partition(self) -> bool:
        """True when the two partitions have the same blocks up to names."""
        return (np.count_nonzero(self.counts, axis=1).max() == 1
                and np.count_nonzero(self.counts, axis=0).max() == 1)


def accuracy(pred, truth) -> float:
    """Fraction correct under the best one-to-one cluster/class matching.

    The matching is solved exactly on the contingency table, so accuracy
    never falls below what a majority-class assignment would give.
    """
    ct = ContingencyTable.from_labels(pred, truth)
    rows, cols = linear_sum_assignment(ct.counts, maximize=True)
    return float(ct.counts[rows, cols].sum()) / ct.n


def nmi(pred, truth) -> float:
    """Mutual information over the arithmetic mean of the two entropies.

    Both-sides-constant partitions make this 0/0; that degenerate case
    scores 1 when the partitions coincide and 0 otherwise.
    """
    ct = ContingencyTable.from_labels(pred, truth)
    n = float(ct.n)
    hp = _entropy(ct.row_marginals, n)
    ht = _entropy(ct.col_marginals, n)
    if hp + ht == 0.0:
        return 1.0 if ct.is_identical_partition() else 0.0
    nz = ct.counts > 0
    nij = ct.counts[nz].astype(np.float64)
    outer = np.outer(ct.row_marginals, ct.col_marginals)[nz].astype(np.float64)
    mi = float(np.sum((nij / n) * np.log(nij * n / outer)))
    val = mi / ((hp + ht) / 2.0)
    # clip away round-off just past the ends
    return float(min(max(val, 0.0), 1.0))


def _entropy(marginals, n):
    p = marginals[marginals > 0].astype(np.float64) / n
    return float(-np.sum(p * np.log(p)))


def ari(pred, truth) -> float:
    """Pair-counting Rand index, adjusted for chance.

    Zero adjusted denominator (e.g. both partitions all-singletons) scores
    1 when the partitions coincide and 0 otherwise.
    """
    ct = ContingencyTable.from_labels(pred, truth)
    sum_ij = _comb2(ct.counts).sum()
    sum_a = _comb2(ct.row_marginals).sum()
    sum_b = _comb2(ct.col_marginals).sum()
    total = _comb2(np.array([ct.n])).sum()
    if total == 0:  # single point: every partition is identical
        return 1.0
    expected = float(sum_a) * float(sum_b) / float(total)
    maximum = (float(sum_a) + float(sum_b)) / 2.0
    if maximum == expected:
        return 1.0 if ct.is_identical_partition() else 0.0
    return (float(sum_ij) - expected) / (maximum - expected)


def _comb2(x):
    x = x.astype(np.int64)
    return x * (x - 1) // 2
