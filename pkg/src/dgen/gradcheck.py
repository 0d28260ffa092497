"""Central finite-difference verification of every analytic gradient.

Each differentiable primitive, the attention layer, and both training
losses get a dedicated randomized case: build a scalar off the operation,
backpropagate, then compare against (f(x+h) - f(x-h)) / 2h entry by entry.
Inputs are sampled away from kinks (activation corners, clip edges) so the
finite differences measure the gradient and not the discontinuity.

The case table must cover the op registry exactly; a missing case is a
hard error, which keeps new primitives honest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .graph import AttributedGraph
from .layers import GatLayer, attention_edges, gat_forward
from .losses import (
    clustering_loss,
    reconstruct,
    reconstruction_loss,
    soft_assign,
    target_distribution,
)

STEP = 1e-5
TOLERANCE = 1e-4


def _away_from_zero(x, margin=0.05):
    """Push entries outside (-margin, margin) so kinked activations stay
    locally linear around the probe points."""
    return np.where(np.abs(x) < margin, np.sign(x) * margin + x, x)


def _weighted_sum(out, coef):
    return T.sum(T.elementwise_mul(out, T.constant(coef)))


# every case: rng -> (list of differentiable leaf Tensors, build() -> scalar Tensor)

def _case_matmul(rng):
    a = T.parameter(rng.normal(size=(4, 3)))
    b = T.parameter(rng.normal(size=(3, 5)))
    c = rng.normal(size=(4, 5))
    return [a, b], lambda: _weighted_sum(T.matmul(a, b), c)


def _case_add(rng):
    a = T.parameter(rng.normal(size=(4, 3)))
    b = T.parameter(rng.normal(size=(1, 3)))  # exercises broadcasting
    c = rng.normal(size=(4, 3))
    return [a, b], lambda: _weighted_sum(T.add(a, b), c)


def _case_elementwise_mul(rng):
    a = T.parameter(rng.normal(size=(3, 4)))
    b = T.parameter(rng.normal(size=(3, 1)))
    c = rng.normal(size=(3, 4))
    return [a, b], lambda: _weighted_sum(T.elementwise_mul(a, b), c)


def _case_concat_cols(rng):
    a = T.parameter(rng.normal(size=(3, 2)))
    b = T.parameter(rng.normal(size=(3, 4)))
    c = rng.normal(size=(3, 6))
    return [a, b], lambda: _weighted_sum(T.concat_cols(a, b), c)


def _case_exp(rng):
    a = T.parameter(rng.uniform(-1.5, 1.5, size=(4, 3)))
    c = rng.normal(size=(4, 3))
    return [a], lambda: _weighted_sum(T.exp(a), c)


def _case_log(rng):
    a = T.parameter(rng.uniform(0.5, 2.5, size=(4, 3)))
    c = rng.normal(size=(4, 3))
    return [a], lambda: _weighted_sum(T.log(a), c)


def _case_leaky_relu(rng):
    a = T.parameter(_away_from_zero(rng.normal(size=(4, 4))))
    c = rng.normal(size=(4, 4))
    return [a], lambda: _weighted_sum(T.leaky_relu(a), c)


def _case_elu(rng):
    a = T.parameter(_away_from_zero(rng.normal(size=(4, 4))))
    c = rng.normal(size=(4, 4))
    return [a], lambda: _weighted_sum(T.elu(a), c)


def _case_sigmoid(rng):
    a = T.parameter(rng.normal(size=(4, 3)) * 2)
    c = rng.normal(size=(4, 3))
    return [a], lambda: _weighted_sum(T.sigmoid(a), c)


def _case_softmax_over_segments(rng):
    rows = 8
    a = T.parameter(rng.normal(size=(rows, 2)))
    seg = rng.integers(0, 3, size=rows).astype(np.intp)
    seg[:3] = np.arange(3)  # every segment non-empty
    c = rng.normal(size=(rows, 2))
    return [a], lambda: _weighted_sum(T.softmax_over_segments(a, seg, 3), c)


def _case_segment_sum(rng):
    a = T.parameter(rng.normal(size=(7, 3)))
    seg = rng.integers(0, 3, size=7).astype(np.intp)
    c = rng.normal(size=(3, 3))
    return [a], lambda: _weighted_sum(T.segment_sum(a, seg, 3), c)


def _case_gather_rows(rng):
    a = T.parameter(rng.normal(size=(5, 3)))
    idx = rng.integers(0, 5, size=8).astype(np.intp)  # repeats accumulate
    c = rng.normal(size=(8, 3))
    return [a], lambda: _weighted_sum(T.gather_rows(a, idx), c)


def _case_sum(rng):
    a = T.parameter(rng.normal(size=(4, 5)))
    return [a], lambda: T.sum(a)


def _case_rowsum(rng):
    a = T.parameter(rng.normal(size=(4, 5)))
    c = rng.normal(size=(4, 1))
    return [a], lambda: _weighted_sum(T.rowsum(a), c)


def _case_frobenius_sq(rng):
    a = T.parameter(rng.normal(size=(3, 4)))
    return [a], lambda: T.frobenius_sq(a)


def _case_transpose(rng):
    a = T.parameter(rng.normal(size=(3, 5)))
    c = rng.normal(size=(5, 3))
    return [a], lambda: _weighted_sum(T.transpose(a), c)


def _case_reciprocal(rng):
    sign = rng.choice([-1.0, 1.0], size=(3, 4))
    a = T.parameter(sign * rng.uniform(0.5, 2.0, size=(3, 4)))
    c = rng.normal(size=(3, 4))
    return [a], lambda: _weighted_sum(T.reciprocal(a), c)


def _case_scale(rng):
    a = T.parameter(rng.normal(size=(4, 3)))
    c = rng.normal(size=(4, 3))
    k = float(rng.uniform(-2, 2))
    return [a], lambda: _weighted_sum(T.scale(a, k), c)


def _case_add_scalar(rng):
    a = T.parameter(rng.normal(size=(4, 3)))
    c = rng.normal(size=(4, 3))
    k = float(rng.uniform(-2, 2))
    return [a], lambda: _weighted_sum(T.add_scalar(a, k), c)


def _case_clip(rng):
    # keep every entry at least 10*STEP away from both clip edges
    raw = rng.uniform(-2.0, 2.0, size=(4, 4))
    raw[np.abs(raw - 1.0) < 0.05] += 0.1
    raw[np.abs(raw + 1.0) < 0.05] -= 0.1
    a = T.parameter(raw)
    c = rng.normal(size=(4, 4))
    return [a], lambda: _weighted_sum(T.clip(a, -1.0, 1.0), c)


def _random_gat_instance(rng):
    n = 6
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.5]
    g = AttributedGraph(n, edges, rng.normal(size=(n, 3)))
    layer = GatLayer(3, 2, 1, False, "identity", "gc", rng)
    h = T.parameter(g.features.copy())
    src, dst = attention_edges(g.edges, n)
    # resample the attention vector until every logit clears the
    # LeakyReLU corner by a wide margin relative to the probe step
    for _ in range(60):
        wh = h.value @ layer.w[0].value
        pair = np.concatenate([wh[dst], wh[src]], axis=1)
        logits = pair @ layer.a[0].value
        if np.abs(logits).min() > 1e-3:
            break
        layer.a[0].value = rng.normal(size=layer.a[0].shape)
    return g, layer, h


def _case_gat_layer(rng):
    g, layer, h = _random_gat_instance(rng)
    c = rng.normal(size=(g.num_nodes, 2))
    params = [h] + layer.params()
    return params, lambda: _weighted_sum(gat_forward(layer, h, g.edges, g.num_nodes), c)


def _case_reconstruction_loss(rng):
    n = 5
    a_ref = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.5:
                a_ref[i, j] = a_ref[j, i] = 1.0
    z = T.parameter(rng.normal(size=(n, 3)) * 0.6)
    return [z], lambda: reconstruction_loss(reconstruct(z), a_ref)


def _case_kl_clustering_loss(rng):
    z = T.parameter(rng.normal(size=(6, 2)))
    mu = T.parameter(rng.normal(size=(3, 2)))
    p = target_distribution(soft_assign(z.value, mu.value))
    return [z, mu], lambda: clustering_loss(p, soft_assign(z, mu))


CASES = {
    "matmul": _case_matmul,
    "add": _case_add,
    "elementwise_mul": _case_elementwise_mul,
    "concat_cols": _case_concat_cols,
    "exp": _case_exp,
    "log": _case_log,
    "leaky_relu": _case_leaky_relu,
    "elu": _case_elu,
    "sigmoid": _case_sigmoid,
    "softmax_over_segments": _case_softmax_over_segments,
    "segment_sum": _case_segment_sum,
    "gather_rows": _case_gather_rows,
    "sum": _case_sum,
    "rowsum": _case_rowsum,
    "frobenius_sq": _case_frobenius_sq,
    "transpose": _case_transpose,
    "reciprocal": _case_reciprocal,
    "scale": _case_scale,
    "add_scalar": _case_add_scalar,
    "clip": _case_clip,
    "gat_layer": _case_gat_layer,
    "reconstruction_loss": _case_reconstruction_loss,
    "kl_clustering_loss": _case_kl_clustering_loss,
}


@dataclass
class CheckResult:
    name: str
    instances: int
    max_rel_err: float
    ok: bool


def _fd_gradient(build, param, step=STEP):
    g = np.zeros_like(param.value)
    for i in range(param.value.shape[0]):
        for j in range(param.value.shape[1]):
            orig = param.value[i, j]
            param.value[i, j] = orig + step
            up = build().value[0, 0]
            param.value[i, j] = orig - step
            down = build().value[0, 0]
            param.value[i, j] = orig
            g[i, j] = (up - down) / (2 * step)
    return g


def check_case(name, seed=0, instances=20) -> CheckResult:
    """Run one named case across fresh random instances."""
    if name not in CASES:
        raise ContractError(f"no gradient case named {name!r}")
    case_id = sorted(CASES).index(name)
    worst = 0.0
    for inst in range(instances):
        rng = np.random.default_rng([seed, case_id, inst])
        params, build = CASES[name](rng)
        T.zero_grads(params)
        with T.Tape() as tape:
            tape.backward(build())
        for p in params:
            analytic = p.grad if p.grad is not None else np.zeros_like(p.value)
            fd = _fd_gradient(build, p)
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1.0)
            rel = np.abs(analytic - fd) / denom
            worst = max(worst, float(rel.max()))
    return CheckResult(name=name, instances=instances,
                       max_rel_err=worst, ok=worst < TOLERANCE)


def run_all(seed=0, instances=20, only=None):
    """Full suite. Asserts the case table covers the op registry."""
    missing = set(T.OP_REGISTRY) - set(CASES)
    if missing:
        raise ContractError(
            f"primitives without a gradient case: {sorted(missing)}")
    names = sorted(CASES) if only is None else list(only)
    results = [check_case(n, seed=seed, instances=instances) for n in names]
    return results, all(r.ok for r in results)
