"""Minimal reverse-mode autodiff kernel on dense float64 matrices.

Every value is a 2-D array: scalars are (1, 1), vectors are (n, 1) or
(1, n). Primitive operations compute forward values eagerly and, while a
Tape is active, record a closure that propagates adjoints. Tape.backward
walks the records in exact reverse execution order and accumulates
d(loss)/d(leaf) into the ``grad`` of every reachable leaf that requires
gradients. Broadcasting is limited to a row or column vector (or a 1x1
scalar) against a matrix.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, DomainError

# Names of every differentiable primitive, filled by the @_op decorator.
# The gradcheck suite asserts it covers this registry exactly.
OP_REGISTRY: dict[str, object] = {}

_ACTIVE_TAPE: "Tape | None" = None

# op name -> multiplicative fault applied to its adjoints. Testing hook for
# the gradcheck negative control; never set during normal operation.
_ADJOINT_FAULTS: dict[str, float] = {}


class Tensor:
    """A matrix value with an optional gradient accumulator."""

    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad=False, name=None):
        v = np.asarray(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        if v.ndim != 2:
            raise DimensionError(f"Tensor values must be 2-D, got shape {v.shape}")
        self.value = v
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad}{tag})"

    # A few operators so model code reads naturally. All defer to the
    # module-level primitives below.
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, float(other))
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return elementwise_mul(self, other)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, -float(other))
        return add(self, scale(other, -1.0))

    def __neg__(self):
        return scale(self, -1.0)


def parameter(value, name=None) -> Tensor:
    """A trainable leaf."""
    return Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=True, name=name)


def constant(value, name=None) -> Tensor:
    """A leaf that never receives gradients."""
    return Tensor(value, requires_grad=False, name=name)


class Tape:
    """Ordered record of executed operations for one training context.

    Use as a context manager; ops executed inside record themselves. A tape
    is confined to a single thread.
    """

    def __init__(self):
        self._records = []  # (out, inputs, backward_fn)
        self._produced = set()  # id() of every tensor produced on this tape

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractError("a Tape is already active in this context")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def reset(self):
        self._records.clear()
        self._produced.clear()

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(leaf) into every reachable requires_grad leaf.

        Accumulation is additive: calling backward twice without zeroing
        doubles the leaf gradients.
        """
        if loss.value.shape != (1, 1):
            raise ContractError(f"backward requires a 1x1 loss, got shape {loss.value.shape}")
        if id(loss) not in self._produced:
            raise ContractError("loss was not produced on this tape")
        # Adjoints of tape-produced tensors; leaves accumulate straight into
        # .grad. Entries are never mutated in place, so sharing is safe.
        adjoint = {id(loss): np.ones((1, 1))}
        for out, inputs, backward_fn in reversed(self._records):
            g = adjoint.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, backward_fn(g)):
                if gi is None or not t.requires_grad:
                    continue
                if id(t) in self._produced:
                    key = id(t)
                    prev = adjoint.get(key)
                    adjoint[key] = gi if prev is None else prev + gi
                else:
                    t.grad = np.array(gi) if t.grad is None else t.grad + gi


def zero_grads(params):
    for p in params:
        p.grad = None


def set_adjoint_fault(op_name: str, factor: float):
    """Corrupt the named op's adjoints by a factor. Gradcheck negative control."""
    _ADJOINT_FAULTS[op_name] = factor


def clear_adjoint_faults():
    _ADJOINT_FAULTS.clear()


def _record(op_name, out, inputs, backward_fn):
    out.requires_grad = any(t.requires_grad for t in inputs)
    if _ACTIVE_TAPE is None or not out.requires_grad:
        return out
    if op_name in _ADJOINT_FAULTS:
        factor = _ADJOINT_FAULTS[op_name]
        inner = backward_fn

        def backward_fn(g, _inner=inner, _f=factor):
            return tuple(None if gi is None else gi * _f for gi in _inner(g))

    _ACTIVE_TAPE._records.append((out, inputs, backward_fn))
    _ACTIVE_TAPE._produced.add(id(out))
    return out


def _op(fn):
    OP_REGISTRY[fn.__name__] = fn
    return fn


def _reduce_to(g, shape):
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def _check_broadcast(op, sa, sb):
    if sa == sb:
        return sa
    ra, ca = sa
    rb, cb = sb
    # one operand may be a scalar, a row vector, or a column vector
    if sa == (1, 1) or sb == (1, 1):
        return (max(ra, rb), max(ca, cb))
    if ra == rb and (ca == 1 or cb == 1):
        return (ra, max(ca, cb))
    if ca == cb and (ra == 1 or rb == 1):
        return (max(ra, rb), ca)
    raise DimensionError(f"{op}: shapes {sa} and {sb} do not broadcast")


# ---------------------------------------------------------------------------
# primitives


@_op
def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    out = Tensor(a.value @ b.value)

    def backward(g):
        ga = g @ b.value.T if a.requires_grad else None
        gb = a.value.T @ g if b.requires_grad else None
        return ga, gb

    return _record("matmul", out, (a, b), backward)


@_op
def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a.shape, b.shape)
    out = Tensor(a.value + b.value)

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _record("add", out, (a, b), backward)


@_op
def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("elementwise_mul", a.shape, b.shape)
    out = Tensor(a.value * b.value)

    def backward(g):
        ga = _reduce_to(g * b.value, a.shape) if a.requires_grad else None
        gb = _reduce_to(g * a.value, b.shape) if b.requires_grad else None
        return ga, gb

    return _record("elementwise_mul", out, (a, b), backward)


@_op
def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat_cols: row counts differ, {a.shape} vs {b.shape}")
    out = Tensor(np.concatenate([a.value, b.value], axis=1))
    ca = a.shape[1]

    def backward(g):
        return g[:, :ca], g[:, ca:]

    return _record("concat_cols", out, (a, b), backward)


@_op
def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.value))

    def backward(g):
        return (g * out.value,)

    return _record("exp", out, (a,), backward)


@_op
def log(a: Tensor) -> Tensor:
    if np.any(a.value <= 0.0):
        raise DomainError("log: input has non-positive entries")
    out = Tensor(np.log(a.value))

    def backward(g):
        return (g / a.value,)

    return _record("log", out, (a,), backward)


@_op
def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.value > 0.0
    out = Tensor(np.where(mask, a.value, slope * a.value))

    def backward(g):
        return (g * np.where(mask, 1.0, slope),)

    return _record("leaky_relu", out, (a,), backward)


@_op
def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    mask = a.value > 0.0
    neg = alpha * np.expm1(np.minimum(a.value, 0.0))
    out = Tensor(np.where(mask, a.value, neg))

    def backward(g):
        return (g * np.where(mask, 1.0, neg + alpha),)

    return _record("elu", out, (a,), backward)


@_op
def sigmoid(a: Tensor) -> Tensor:
    v = a.value
    s = np.empty_like(v)
    pos = v >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    s[~pos] = ev / (1.0 + ev)
    out = Tensor(s)

    def backward(g):
        return (g * s * (1.0 - s),)

    return _record("sigmoid", out, (a,), backward)


@_op
def softmax_over_segments(a: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Softmax normalized independently within each segment of rows.

    ``segments`` assigns each row of ``a`` to a segment; the softmax runs
    down the rows of each segment, per column. Realizes per-neighborhood
    attention normalization when rows are edges and segments are target
    nodes.
    """
    seg = np.asarray(segments, dtype=np.intp)
    if seg.shape != (a.shape[0],):
        raise DimensionError(
            f"softmax_over_segments: need one segment id per row, got {seg.shape} for {a.shape}"
        )
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise ContractError("softmax_over_segments: segment id out of range")
    d = a.shape[1]
    # constant per-segment max shift; cancels exactly in both value and grad
    m = np.full((num_segments, d), -np.inf)
    np.maximum.at(m, seg, a.value)
    e = np.exp(a.value - m[seg])
    denom = np.zeros((num_segments, d))
    np.add.at(denom, seg, e)
    y = e / denom[seg]
    out = Tensor(y)

    def backward(g):
        dot = np.zeros((num_segments, d))
        np.add.at(dot, seg, y * g)
        return (y * (g - dot[seg]),)

    return _record("softmax_over_segments", out, (a,), backward)


@_op
def segment_sum(a: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into their segment's output row."""
    seg = np.asarray(segments, dtype=np.intp)
    if seg.shape != (a.shape[0],):
        raise DimensionError(
            f"segment_sum: need one segment id per row, got {seg.shape} for {a.shape}"
        )
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise ContractError("segment_sum: segment id out of range")
    s = np.zeros((num_segments, a.shape[1]))
    np.add.at(s, seg, a.value)
    out = Tensor(s)

    def backward(g):
        return (g[seg],)

    return _record("segment_sum", out, (a,), backward)


@_op
def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows of ``a``; backward scatter-adds into the sources."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionError("gather_rows: index must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ContractError("gather_rows: row index out of range")
    out = Tensor(a.value[idx])

    def backward(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, idx, g)
        return (ga,)

    return _record("gather_rows", out, (a,), backward)


@_op
def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy's namespace habit
    out = Tensor(np.sum(a.value))

    def backward(g):
        return (np.full(a.shape, g[0, 0]),)

    return _record("sum", out, (a,), backward)


@_op
def rowsum(a: Tensor) -> Tensor:
    out = Tensor(a.value.sum(axis=1, keepdims=True))

    def backward(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("rowsum", out, (a,), backward)


@_op
def frobenius_sq(a: Tensor) -> Tensor:
    out = Tensor(np.sum(a.value * a.value))

    def backward(g):
        return (2.0 * g[0, 0] * a.value,)

    return _record("frobenius_sq", out, (a,), backward)


@_op
def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.value.T.copy())

    def backward(g):
        return (g.T,)

    return _record("transpose", out, (a,), backward)


@_op
def reciprocal(a: Tensor) -> Tensor:
    if np.any(a.value == 0.0):
        raise DomainError("reciprocal: input has zero entries")
    out = Tensor(1.0 / a.value)

    def backward(g):
        return (-g * out.value * out.value,)

    return _record("reciprocal", out, (a,), backward)


@_op
def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.value * c)

    def backward(g):
        return (g * c,)

    return _record("scale", out, (a,), backward)


@_op
def add_scalar(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.value + c)

    def backward(g):
        return (g,)

    return _record("add_scalar", out, (a,), backward)


@_op
def clip(a: Tensor, lo=None, hi=None) -> Tensor:
    """Clamp entries to [lo, hi]; gradient is zero where clamping bit."""
    out = Tensor(np.clip(a.value, lo, hi))
    mask = np.ones(a.shape, dtype=bool)
    if lo is not None:
        mask &= a.value >= lo
    if hi is not None:
        mask &= a.value <= hi

    def backward(g):
        return (g * mask,)

    return _record("clip", out, (a,), backward)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adaptive-moment optimizer; moments persist across step() calls."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        for p in self.params:
            if p.grad is None:
                raise ContractError(f"adam step: parameter {p.name or '<unnamed>'} has no grad")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(opt: Adam):
    """One in-place adaptive-moment update over opt's parameters."""
    opt.step()


# ---------------------------------------------------------------------------
# checkpoint serialization: "name rows cols" header then row-major decimals


def save_params(path, params):
    with open(path, "w") as fh:
        for p in params:
            if not p.name:
                raise ContractError("save_params: every parameter needs a name")
            r, c = p.shape
            fh.write(f"{p.name} {r} {c}\n")
            for row in p.value:
                fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_params(path) -> dict[str, np.ndarray]:
    table = {}
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        name, r, c = lines[i].split()
        r, c = int(r), int(c)
        block = lines[i + 1 : i + 1 + r]
        table[name] = np.array([[float(x) for x in ln.split()] for ln in block]).reshape(r, c)
        i += 1 + r
    return table


def assign_params(params, table):
    for p in params:
        if p.name not in table:
            raise ContractError(f"checkpoint is missing parameter {p.name!r}")
        v = table[p.name]
        if v.shape != p.shape:
            raise DimensionError(f"checkpoint {p.name}: shape {v.shape} != {p.shape}")
        p.value = v.astype(np.float64)
