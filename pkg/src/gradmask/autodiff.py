"""Reverse-mode automatic differentiation over dense float64 arrays.

Every primitive's backward rule is expressed in terms of the primitives
themselves, so the adjoint computation can itself be recorded as a graph
(``create_graph=True``) and differentiated again.  This is what makes the
input-gradient penalty trainable: the parameter gradient of a function of
an input gradient is just a second backward pass.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "constant",
    "no_grad",
    "backward",
    "grad_check",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "transpose_last",
    "reshape",
    "broadcast_to",
    "sum_to",
    "tsum",
    "tmean",
    "square",
    "relu",
    "sigmoid",
    "log1p_exp",
    "slice_axis",
    "pad_axis",
    "concat",
    "take_flat",
    "scatter_flat",
    "global_avg_pool",
]


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense float64 array plus optional graph linkage.

    ``parents`` and ``backward_fn`` are set only on tensors produced by an
    op while grad recording is enabled and at least one operand requires
    grad.  ``backward_fn(adjoint)`` returns one adjoint (or None) per
    parent, built out of the same primitive ops.
    """

    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars are wrapped as non-grad constants
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def constant(data):
    return Tensor(data)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class ShapeError(ValueError):
    pass


def _node(data, op, parents, backward_fn):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)
    return Tensor(data)


# ---------------------------------------------------------------------------
# shape plumbing


def broadcast_to(x, shape):
    shape = tuple(shape)
    data = np.broadcast_to(x.data, shape).copy()

    def bwd(g):
        return (sum_to(g, x.data.shape),)

    return _node(data, "broadcast_to", (x,), bwd)


def sum_to(x, shape):
    """Sum ``x`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    shape = tuple(shape)
    data = x.data
    if data.shape != shape:
        lead = data.ndim - len(shape)
        axes = tuple(range(lead)) + tuple(
            i + lead for i, n in enumerate(shape) if n == 1 and data.shape[i + lead] != 1
        )
        data = data.sum(axis=axes, keepdims=False)
        data = data.reshape(shape)
    else:
        data = data.copy()
    src_shape = x.data.shape

    def bwd(g):
        return (broadcast_to(g, src_shape),)

    return _node(data, "sum_to", (x,), bwd)


def reshape(x, shape):
    shape = tuple(shape)
    src_shape = x.data.shape
    data = x.data.reshape(shape).copy()

    def bwd(g):
        return (reshape(g, src_shape),)

    return _node(data, "reshape", (x,), bwd)


def transpose_last(x):
    if x.data.ndim < 2:
        raise ShapeError(f"transpose_last needs ndim >= 2, got shape {x.data.shape}")
    data = np.swapaxes(x.data, -1, -2).copy()

    def bwd(g):
        return (transpose_last(g),)

    return _node(data, "transpose_last", (x,), bwd)


def slice_axis(x, axis, start, stop):
    n = x.data.shape[axis]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice [{start},{stop}) out of range for axis {axis} of size {n}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    data = x.data[tuple(idx)].copy()

    def bwd(g):
        return (pad_axis(g, axis, start, n - stop),)

    return _node(data, "slice_axis", (x,), bwd)


def pad_axis(x, axis, before, after):
    pads = [(0, 0)] * x.data.ndim
    pads[axis] = (before, after)
    data = np.pad(x.data, pads)
    start = before
    stop = before + x.data.shape[axis]

    def bwd(g):
        return (slice_axis(g, axis, start, stop),)

    return _node(data, "pad_axis", (x,), bwd)


def concat(tensors, axis):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            slice_axis(g, axis, int(offsets[i]), int(offsets[i + 1])) for i in range(len(sizes))
        )

    return _node(data, "concat", tuple(tensors), bwd)


def take_flat(x, idx):
    """Gather along the last axis: ``out[..., s] = x[..., idx[s]]``.

    ``idx`` may be any integer array; its shape replaces the last axis.
    """
    idx = np.asarray(idx, dtype=np.intp)
    feat = x.data.shape[-1]
    if idx.size and (idx.min() < 0 or idx.max() >= feat):
        raise ShapeError(f"gather index out of range [0,{feat})")
    data = x.data[..., idx].copy()

    def bwd(g):
        return (scatter_flat(g, idx, feat),)

    return _node(data, "take_flat", (x,), bwd)


def scatter_flat(x, idx, feat):
    """Adjoint of take_flat: scatter-add trailing ``idx.shape`` axes into ``feat``."""
    idx = np.asarray(idx, dtype=np.intp)
    lead = x.data.shape[: x.data.ndim - idx.ndim]
    flat = x.data.reshape(int(np.prod(lead, dtype=np.intp)) if lead else 1, -1)
    out = np.zeros((flat.shape[0], feat))
    np.add.at(out, (slice(None), idx.reshape(-1)), flat)
    data = out.reshape(lead + (feat,))

    def bwd(g):
        return (take_flat(g, idx),)

    return _node(data, "scatter_flat", (x,), bwd)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    data = a.data + b.data

    def bwd(g):
        return (sum_to(g, a.data.shape), sum_to(g, b.data.shape))

    return _node(data, "add", (a, b), bwd)


def sub(a, b):
    data = a.data - b.data

    def bwd(g):
        return (sum_to(g, a.data.shape), neg(sum_to(g, b.data.shape)))

    return _node(data, "sub", (a, b), bwd)


def neg(x):
    def bwd(g):
        return (neg(g),)

    return _node(-x.data, "neg", (x,), bwd)


def mul(a, b):
    data = a.data * b.data

    def bwd(g):
        return (sum_to(mul(g, b), a.data.shape), sum_to(mul(g, a), b.data.shape))

    return _node(data, "mul", (a, b), bwd)


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner-dim mismatch: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def bwd(g):
        ga = sum_to(matmul(g, transpose_last(b)), a.data.shape)
        gb = sum_to(matmul(transpose_last(a), g), b.data.shape)
        return (ga, gb)

    return _node(data, "matmul", (a, b), bwd)


def square(x):
    def bwd(g):
        return (mul(g, mul(Tensor(2.0), x)),)

    return _node(x.data**2, "square", (x,), bwd)


def tsum(x, axis=None, keepdims=False):
    if axis is None:
        data = x.data.sum()
        kshape = (1,) * x.data.ndim
    else:
        data = x.data.sum(axis=axis, keepdims=keepdims)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        kshape = tuple(1 if i in axes else n for i, n in enumerate(x.data.shape))
    src_shape = x.data.shape

    def bwd(g):
        return (broadcast_to(reshape(g, kshape), src_shape),)

    return _node(data, "sum", (x,), bwd)


def tmean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), Tensor(1.0 / n))


def relu(x):
    gate = Tensor((x.data > 0).astype(np.float64))  # constant: relu'' == 0

    def bwd(g):
        return (mul(g, gate),)

    return _node(np.maximum(x.data, 0.0), "relu", (x,), bwd)


def sigmoid(x):
    data = np.empty_like(x.data)
    pos = x.data >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    data[~pos] = ex / (1.0 + ex)

    def bwd(g):
        s = sigmoid(x)
        return (mul(g, mul(s, sub(Tensor(1.0), s))),)

    return _node(data, "sigmoid", (x,), bwd)


def log1p_exp(x):
    """Numerically stable ln(1 + exp(x)); derivative is sigmoid(x)."""
    data = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))

    def bwd(g):
        return (mul(g, sigmoid(x)),)

    return _node(data, "log1p_exp", (x,), bwd)


def global_avg_pool(x):
    """Mean over the last (time) axis."""
    return tmean(x, axis=x.data.ndim - 1)


# ---------------------------------------------------------------------------
# backward and verification


def backward(output, leaves: Sequence[Tensor], create_graph: bool = False):
    """Adjoints of a scalar ``output`` with respect to ``leaves``.

    With ``create_graph=True`` the adjoint computation is itself recorded,
    so functions of the returned adjoints can be differentiated again.
    Leaves unreachable from ``output`` get zero adjoints.
    """
    if output.data.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.data.shape}")

    topo: list[Tensor] = []
    seen = set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))

    adjoints: dict[int, Tensor] = {id(output): Tensor(np.ones_like(output.data))}
    ctx = contextlib.nullcontext() if create_graph else no_grad()
    with ctx:
        for node in reversed(topo):
            g = adjoints.get(id(node))
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = adjoints.get(id(parent))
                adjoints[id(parent)] = pg if prev is None else add(prev, pg)

    out = []
    for leaf in leaves:
        g = adjoints.get(id(leaf))
        out.append(g if g is not None else Tensor(np.zeros_like(leaf.data)))
    return out


def _numeric_grads(f: Callable, point: list[np.ndarray]):
    grads = []
    for i, arr in enumerate(point):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            h = 1e-6 * max(1.0, abs(flat[j]))
            orig = flat[j]
            flat[j] = orig + h
            hi = f([Tensor(a) for a in point]).item()
            flat[j] = orig - h
            lo = f([Tensor(a) for a in point]).item()
            flat[j] = orig
            gflat[j] = (hi - lo) / (2 * h)
        grads.append(g)
    return grads


def grad_check(f: Callable, point: Sequence[Tensor], order: int = 1, seed: int = 0) -> float:
    """Max relative error of analytic derivatives against central differences.

    ``f`` maps a list of tensors to a scalar tensor.  Order 2 checks a
    Hessian-vector product (double backward) against finite differences of
    the analytic gradient along a random direction.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    arrays = [t.data.copy() for t in point]

    def analytic_grads(arrs):
        leaves = [Tensor(a, requires_grad=True) for a in arrs]
        gs = backward(f(leaves), leaves)
        return [g.data for g in gs]

    if order == 1:
        analytic = analytic_grads(arrays)
        numeric = _numeric_grads(f, [a.copy() for a in arrays])
    else:
        rng = np.random.default_rng(seed)
        direction = [rng.standard_normal(a.shape) for a in arrays]
        leaves = [Tensor(a, requires_grad=True) for a in arrays]
        grads = backward(f(leaves), leaves, create_graph=True)
        acc = None
        for g, v in zip(grads, direction):
            term = tsum(mul(g, Tensor(v)))
            acc = term if acc is None else add(acc, term)
        analytic = [h.data for h in backward(acc, leaves)]
        h = 1e-6
        plus = analytic_grads([a + h * v for a, v in zip(arrays, direction)])
        minus = analytic_grads([a - h * v for a, v in zip(arrays, direction)])
        numeric = [(p - m) / (2 * h) for p, m in zip(plus, minus)]

    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.abs(n))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)) if a.size else 0.0)
    return worst
