"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tape`` records every primitive operation as it executes; ``backward``
replays the records in reverse order, accumulating vector-Jacobian products
into the leaves marked as parameters. Tensors are float32 by default; a
float64 tape can be requested for finite-difference testing. Reductions
accumulate in float64 regardless of tape dtype.

Gradient accumulation always sums contributions; any averaging is the
caller's job (done explicitly in loss construction).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

GOLDEN64 = np.uint64(0x9E3779B97F4A7C15)


class ShapeError(ValueError):
    """An operand does not conform to the op's shape rule."""


class Tape:
    """Append-only operation record. Nodes are stored in topological order
    (parents always precede children), so a single reverse sweep suffices."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Tensor] = []

    def _record(self, value, parents=(), vjp=None, requires_grad=None, is_param=False):
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        t = Tensor(self, len(self.nodes), value, parents, vjp, requires_grad, is_param)
        self.nodes.append(t)
        return t

    def constant(self, value):
        """Record a non-differentiable leaf."""
        arr = np.asarray(value, dtype=self.dtype)
        return self._record(arr)

    def param(self, value):
        """Record a differentiable leaf. ``value`` is wrapped, not copied, so
        in-place optimizer updates are visible to the next tape."""
        arr = np.asarray(value, dtype=self.dtype)
        return self._record(arr, requires_grad=True, is_param=True)


class Tensor:
    """One node on a tape: a dense value plus links to the inputs that made it."""

    __slots__ = ("tape", "idx", "value", "parents", "vjp", "requires_grad", "is_param", "grad")

    def __init__(self, tape, idx, value, parents, vjp, requires_grad, is_param):
        self.tape = tape
        self.idx = idx
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.is_param = is_param
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(idx={self.idx}, shape={self.value.shape}, param={self.is_param})"

    # operator sugar; python scalars go through the fast scale/shift paths
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, -float(other))
        return sub(self, other)

    def __rsub__(self, other):
        return shift(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return scale(sum_(self, axis=axis), 1.0 / n)

    def reshape(self, shape):
        return reshape(self, shape)

    def item(self):
        return float(self.value)


def _as_tensors(tape, xs):
    return [x if isinstance(x, Tensor) else tape.constant(x) for x in xs]


def _unbroadcast(g, shape):
    """Reduce a gradient produced under numpy broadcasting back to ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    na, nb = a.requires_grad, b.requires_grad

    def vjp(g):
        return (_unbroadcast(g, a.shape) if na else None,
                _unbroadcast(g, b.shape) if nb else None)

    return a.tape._record(a.value + b.value, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    na, nb = a.requires_grad, b.requires_grad

    def vjp(g):
        return (_unbroadcast(g, a.shape) if na else None,
                _unbroadcast(-g, b.shape) if nb else None)

    return a.tape._record(a.value - b.value, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    na, nb = a.requires_grad, b.requires_grad
    av, bv = a.value, b.value

    def vjp(g):
        return (_unbroadcast(g * bv, a.shape) if na else None,
                _unbroadcast(g * av, b.shape) if nb else None)

    return a.tape._record(av * bv, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    def vjp(g):
        return (g * s,)

    return a.tape._record(a.value * a.tape.dtype.type(s), (a,), vjp)


def shift(a: Tensor, c: float) -> Tensor:
    def vjp(g):
        return (g,)

    return a.tape._record(a.value + a.tape.dtype.type(c), (a,), vjp)


def neg(a: Tensor) -> Tensor:
    def vjp(g):
        return (-g,)

    return a.tape._record(-a.value, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    na, nb = a.requires_grad, b.requires_grad
    av, bv = a.value, b.value

    def vjp(g):
        return (g @ bv.T if na else None, av.T @ g if nb else None)

    return a.tape._record(av @ bv, (a, b), vjp)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + b for (M,K) @ (K,N) with bias (N,)."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: shapes {x.shape} and {w.shape} do not conform")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"affine: bias shape {b.shape} does not match output width {w.shape[1]}")
    nx, nw, nb = x.requires_grad, w.requires_grad, b.requires_grad
    xv, wv = x.value, w.value

    def vjp(g):
        return (g @ wv.T if nx else None,
                xv.T @ g if nw else None,
                g.sum(axis=0) if nb else None)

    out = xv @ wv
    out += b.value
    return x.tape._record(out, (x, w, b), vjp)


def affine_relu(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """relu(x @ w + b) as one node; halves the allocations of the hot path."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine_relu: shapes {x.shape} and {w.shape} do not conform")
    nx, nw, nb = x.requires_grad, w.requires_grad, b.requires_grad
    xv, wv = x.value, w.value
    out = xv @ wv
    out += b.value
    np.maximum(out, 0.0, out=out)

    def vjp(g):
        gp = g * (out > 0)
        return (gp @ wv.T if nx else None,
                xv.T @ gp if nw else None,
                gp.sum(axis=0) if nb else None)

    return x.tape._record(out, (x, w, b), vjp)


def affine2_relu(x1: Tensor, w1: Tensor, x2: Tensor, w2: Tensor, b: Tensor) -> Tensor:
    """relu(x1 @ w1 + x2 @ w2 + b): a concat layer without the concat copy."""
    if x1.shape[1] != w1.shape[0] or x2.shape[1] != w2.shape[0] or x1.shape[0] != x2.shape[0]:
        raise ShapeError(f"affine2_relu: shapes {x1.shape}@{w1.shape} + {x2.shape}@{w2.shape}")
    if w1.shape[1] != w2.shape[1]:
        raise ShapeError(f"affine2_relu: output widths differ: {w1.shape} vs {w2.shape}")
    needs = (x1.requires_grad, w1.requires_grad, x2.requires_grad, w2.requires_grad,
             b.requires_grad)
    x1v, w1v, x2v, w2v = x1.value, w1.value, x2.value, w2.value
    out = x1v @ w1v
    out += x2v @ w2v
    out += b.value
    np.maximum(out, 0.0, out=out)

    def vjp(g):
        gp = g * (out > 0)
        return (gp @ w1v.T if needs[0] else None,
                x1v.T @ gp if needs[1] else None,
                gp @ w2v.T if needs[2] else None,
                x2v.T @ gp if needs[3] else None,
                gp.sum(axis=0) if needs[4] else None)

    return x1.tape._record(out, (x1, w1, x2, w2, b), vjp)


def linear_rows(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (M,K) against row-major weights w (N,K) plus bias (N,) -> (M,N).

    Forward uses broadcast-multiply + a contiguous pairwise reduction, which
    (unlike BLAS with tiny N) gives batch-size-invariant bits; meant for the
    narrow output heads. Backward uses BLAS.
    """
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear_rows: shapes {x.shape} and {w.shape} do not conform")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"linear_rows: bias shape {b.shape} does not match rows {w.shape[0]}")
    nx, nw, nb = x.requires_grad, w.requires_grad, b.requires_grad
    xv, wv = x.value, w.value

    def vjp(g):
        return (g @ wv if nx else None,
                g.T @ xv if nw else None,
                g.sum(axis=0) if nb else None)

    m = xv.shape[0]
    n = wv.shape[0]
    out = np.empty((m, n), dtype=xv.dtype)
    buf = np.empty_like(xv)
    for row in range(n):
        np.multiply(xv, wv[row], out=buf)
        out[:, row] = buf.sum(axis=1)
    out += b.value
    return x.tape._record(out, (x, w, b), vjp)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.value, 0)

    def vjp(g):
        return (g * (a.value > 0),)

    return a.tape._record(out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    v = a.value
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)

    def vjp(g):
        return (g * (out * (1.0 - out)),)

    return a.tape._record(out, (a,), vjp)


def sin(a: Tensor) -> Tensor:
    def vjp(g):
        return (g * np.cos(a.value),)

    return a.tape._record(np.sin(a.value), (a,), vjp)


def cos(a: Tensor) -> Tensor:
    def vjp(g):
        return (g * -np.sin(a.value),)

    return a.tape._record(np.cos(a.value), (a,), vjp)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)

    def vjp(g):
        return (g * out,)

    return a.tape._record(out, (a,), vjp)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    """Sum reduction. Full reductions (the loss sums) accumulate in float64;
    axis reductions use the tape dtype with numpy's pairwise summation."""
    acc = np.float64 if axis is None else None
    out = np.sum(a.value, axis=axis, keepdims=keepdims, dtype=acc).astype(a.tape.dtype)
    shp = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shp),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shp),)

    return a.tape._record(out, (a,), vjp)


def broadcast_to(a: Tensor, shape) -> Tensor:
    try:
        out = np.broadcast_to(a.value, shape)
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {a.shape} to {tuple(shape)}") from None

    def vjp(g):
        return (_unbroadcast(g, a.shape),)

    return a.tape._record(out, (a,), vjp)


def slice_(a: Tensor, key) -> Tensor:
    out = a.value[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out, dtype=a.tape.dtype)
    shp = a.shape

    def vjp(g):
        full = np.zeros(shp, dtype=g.dtype)
        full[key] = g
        return (full,)

    return a.tape._record(out, (a,), vjp)


def concat(tensors, axis=0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input list")
    ref = tensors[0]
    for t in tensors[1:]:
        sa, sb = list(ref.shape), list(t.shape)
        sa.pop(axis), sb.pop(axis)
        if sa != sb:
            raise ShapeError(f"concat: shapes {ref.shape} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]
    needs = [t.requires_grad for t in tensors]

    def vjp(g):
        parts = np.split(g, offsets, axis=axis)
        return tuple(p if n else None for p, n in zip(parts, needs))

    out = np.concatenate([t.value for t in tensors], axis=axis)
    return ref.tape._record(out, tuple(tensors), vjp)


def cumsum(a: Tensor, axis: int) -> Tensor:
    def vjp(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return a.tape._record(np.cumsum(a.value, axis=axis), (a,), vjp)


def cumsum_exclusive(a: Tensor, axis: int) -> Tensor:
    """out[..., i] = sum of a[..., j] for j < i (zero for i = 0)."""
    inc = np.cumsum(a.value, axis=axis)
    out = np.zeros_like(a.value)
    head = [slice(None)] * a.value.ndim
    tail = [slice(None)] * a.value.ndim
    head[axis] = slice(1, None)
    tail[axis] = slice(None, -1)
    out[tuple(head)] = inc[tuple(tail)]

    def vjp(g):
        rev = np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)
        gg = np.zeros_like(g)
        gg[tuple(tail)] = rev[tuple(head)]
        return (gg,)

    return a.tape._record(out, (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    shp = a.shape

    def vjp(g):
        return (g.reshape(shp),)

    return a.tape._record(a.value.reshape(shape), (a,), vjp)


_OPS = {
    "add": add,
    "mul": mul,
    "matmul": matmul,
    "relu": relu,
    "sigmoid": sigmoid,
    "sin": sin,
    "cos": cos,
    "exp": exp,
    "neg": neg,
    "sum": sum_,
    "broadcast": broadcast_to,
    "slice": slice_,
    "concat": concat,
    "sub": sub,
    "cumsum": cumsum,
    "reshape": reshape,
}


def forward_op(op: str, inputs, **kwargs) -> Tensor:
    """Name-based dispatch over the primitive set (diagnostics name the op)."""
    if op not in _OPS:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_OPS)}")
    if op == "concat":
        return concat(inputs, **kwargs)
    if op in ("broadcast", "slice", "reshape"):
        return _OPS[op](inputs[0], kwargs.pop("arg"), **kwargs)
    return _OPS[op](*inputs, **kwargs)


# ---------------------------------------------------------------------------
# backward pass


def backward(root: Tensor) -> None:
    """Populate ``.grad`` on every tensor that contributed to ``root``.

    ``root`` must be a scalar (size 1). Each node is visited exactly once, in
    reverse topological order, so re-running an identical tape produces
    bit-identical gradients.
    """
    if root.value.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    nodes = root.tape.nodes
    root.grad = np.ones_like(root.value)
    for i in range(root.idx, -1, -1):
        node = nodes[i]
        g = node.grad
        if g is None or node.vjp is None or not node.requires_grad:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            parent.grad = pg if parent.grad is None else parent.grad + pg


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moment buffers plus step and skip counters."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    skipped: int = 0


def adam_step(params, grads, state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """One Adam update with bias correction, applied to ``params`` in place.

    A non-finite gradient anywhere skips the whole step (logged and counted)
    so a single bad batch cannot poison the moment buffers.
    """
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} params vs {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"adam_step: mismatched shapes {p.shape} / {g.shape} / {m.shape}")
    if any(not np.all(np.isfinite(g)) for g in grads):
        state.skipped += 1
        log.warning("adam_step: non-finite gradient, step skipped (total skipped: %d)", state.skipped)
        return state

    state.step += 1
    b1, b2 = betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
    return state


def collect_grads(param_tensors) -> list:
    """Gradients for a list of param tensors after backward (zeros where unused)."""
    out = []
    for t in param_tensors:
        out.append(t.grad if t.grad is not None else np.zeros_like(t.value))
    return out


# ---------------------------------------------------------------------------
# deterministic per-ray randomness (splitmix64)


def _splitmix64(x):
    # inputs are >=1-d uint64 arrays: overflow wraps silently, as intended
    z = x + GOLDEN64
    z = np.bitwise_xor(z, z >> np.uint64(30)) * np.uint64(0xBF58476D1CE4E5B9)
    z = np.bitwise_xor(z, z >> np.uint64(27)) * np.uint64(0x94D049BB133111EB)
    return np.bitwise_xor(z, z >> np.uint64(31))


def mix64(a, b):
    """Combine two integer streams into one 64-bit seed value/array."""
    a = np.atleast_1d(np.asarray(a, dtype=np.uint64))
    b = np.atleast_1d(np.asarray(b, dtype=np.uint64))
    out = _splitmix64(a * np.uint64(0xD1B54A32D192ED03) + b * GOLDEN64)
    return out if out.size > 1 else out[0]


def hashed_uniform(seeds, n: int, salt: int):
    """Deterministic uniforms in [0,1), shape (len(seeds), n).

    Each row depends only on its own seed, so per-ray randomness is identical
    whether the ray is rendered alone or inside a batch.
    """
    seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1, 1)
    idx = (np.arange(n, dtype=np.uint64) + np.uint64(1)) * GOLDEN64 + np.uint64(salt)
    bits = _splitmix64(seeds * np.uint64(0xD1B54A32D192ED03) + idx[None, :])
    return ((bits >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)).astype(np.float32)
