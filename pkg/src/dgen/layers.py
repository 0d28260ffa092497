"""Multi-head graph attention layers and the two-layer encoder stacks.

Attention runs over directed neighbor pairs plus a transient self-loop per
node; coefficients are normalized per destination node. One projection W
is shared between both sides of each head's attention argument, and the
attention vector is a single column of width twice the head dimension.
Hidden layers concatenate heads under an ELU; final layers average heads
with no squashing so embeddings stay unbounded.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError
from .graph import AttributedGraph
from .pooling import PooledGraph


def attention_edges(edges, n):
    """(src, dst) arrays covering both directions of every edge plus every
    node's self-loop. The self-loop lives only here, never in storage."""
    e = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    loops = np.arange(n, dtype=np.intp)
    src = np.concatenate([e[:, 0], e[:, 1], loops])
    dst = np.concatenate([e[:, 1], e[:, 0], loops])
    return src, dst


def _glorot(rng, rows, cols, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(rows, cols))


class GatLayer:
    """One multi-head attention layer.

    concat=True lays head outputs side by side (out_dim must divide by the
    head count); concat=False averages them, giving each head the full
    output width.
    """

    def __init__(self, in_dim, out_dim, heads, concat, activation, prefix, rng):
        if heads < 1:
            raise ContractError("need at least one head")
        if concat:
            if out_dim % heads != 0:
                raise ContractError(
                    f"output width {out_dim} not divisible by {heads} heads")
            head_dim = out_dim // heads
        else:
            head_dim = out_dim
        if activation not in ("elu", "identity"):
            raise ContractError(f"unknown activation {activation!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.heads = heads
        self.head_dim = head_dim
        self.concat = concat
        self.activation = activation
        self.w = []
        self.a = []
        for m in range(heads):
            self.w.append(T.parameter(
                _glorot(rng, in_dim, head_dim, in_dim, head_dim),
                name=f"{prefix}.h{m}.W"))
            self.a.append(T.parameter(
                _glorot(rng, 2 * head_dim, 1, 2 * head_dim, 1),
                name=f"{prefix}.h{m}.a"))

    def params(self):
        return self.w + self.a

    def forward(self, h: T.Tensor, src, dst, n) -> T.Tensor:
        if h.shape[1] != self.in_dim:
            raise ContractError(
                f"feature width {h.shape[1]} does not match layer input {self.in_dim}")
        if h.shape[0] != n:
            raise ContractError(f"expected {n} feature rows, got {h.shape[0]}")
        outs = []
        for w, a in zip(self.w, self.a):
            wh = T.matmul(h, w)
            pair = T.concat_cols(T.gather_rows(wh, dst), T.gather_rows(wh, src))
            logits = T.leaky_relu(T.matmul(pair, a), slope=0.2)
            alpha = T.softmax_over_segments(logits, dst, n)
            msg = T.elementwise_mul(T.gather_rows(wh, src), alpha)
            outs.append(T.segment_sum(msg, dst, n))
        if self.concat:
            out = outs[0]
            for o in outs[1:]:
                out = T.concat_cols(out, o)
        else:
            out = outs[0]
            for o in outs[1:]:
                out = T.add(out, o)
            if self.heads > 1:
                out = T.scale(out, 1.0 / self.heads)
        if self.activation == "elu":
            out = T.elu(out)
        return out

    def attention_rows(self, h, src, dst, n):
        """Coefficients per head as plain arrays (diagnostics and tests)."""
        rows = []
        for w, a in zip(self.w, self.a):
            wh = h.value @ w.value if isinstance(h, T.Tensor) else h @ w.value
            pair = np.concatenate([wh[dst], wh[src]], axis=1)
            logits = pair @ a.value
            z = np.where(logits > 0, logits, 0.2 * logits)
            alpha = T.softmax_over_segments(T.constant(z), dst, n)
            rows.append(alpha.value[:, 0])
        return rows


def gat_forward(layer: GatLayer, h, edges, n) -> T.Tensor:
    """Single-layer convenience walking the standard pair construction."""
    src, dst = attention_edges(edges, n)
    ht = h if isinstance(h, T.Tensor) else T.constant(h)
    return layer.forward(ht, src, dst, n)


class Encoder:
    """Ordered stack of attention layers over one fixed graph structure."""

    def __init__(self, layers):
        if not layers:
            raise ContractError("encoder needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ContractError(
                    f"layer widths do not chain: {a.out_dim} -> {b.in_dim}")
        self.layers = list(layers)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def params(self):
        out = []
        for l in self.layers:
            out.extend(l.params())
        return out

    def forward(self, h: T.Tensor, src, dst, n) -> T.Tensor:
        out = h
        for l in self.layers:
            out = l.forward(out, src, dst, n)
        return out


def _structure_of(g):
    if isinstance(g, AttributedGraph):
        return g.num_nodes, g.edges, None
    if isinstance(g, PooledGraph):
        return g.num_nodes, g.edge_pairs(), g.features
    raise ContractError(f"cannot encode a {type(g).__name__}")


def encode(enc: Encoder, g, features=None) -> T.Tensor:
    """Run the stack over a full or pooled graph.

    Features default to the graph's own (pooled graphs carry their gated
    rows, which may already be on the tape); pass `features` to override.
    """
    n, edges, carried = _structure_of(g)
    h = features if features is not None else carried
    if h is None:
        h = g.features
    ht = h if isinstance(h, T.Tensor) else T.constant(np.asarray(h, dtype=np.float64))
    src, dst = attention_edges(edges, n)
    return enc.forward(ht, src, dst, n)


def classify_forward(clf: Encoder, g: AttributedGraph, features=None) -> T.Tensor:
    """Per-node logits over clusters for every node of the full graph."""
    return encode(clf, g, features)


def make_encoder(in_dim, hidden, out_dim, heads, prefix, rng) -> Encoder:
    """Two attention layers: concatenated-head hidden under ELU, then
    averaged-head linear output."""
    return Encoder([
        GatLayer(in_dim, hidden, heads, True, "elu", f"{prefix}.l0", rng),
        GatLayer(hidden, out_dim, heads, False, "identity", f"{prefix}.l1", rng),
    ])


def make_classifier(in_dim, hidden, num_classes, heads, prefix, rng) -> Encoder:
    return Encoder([
        GatLayer(in_dim, hidden, heads, True, "elu", f"{prefix}.l0", rng),
        GatLayer(hidden, num_classes, heads, False, "identity", f"{prefix}.l1", rng),
    ])
