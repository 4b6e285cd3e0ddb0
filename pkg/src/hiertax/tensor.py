"""Dense float64 tensors with reverse-mode gradients.

Every differentiable operation records its parents and a backward closure on
the output tensor. ``backward`` walks that graph in reverse topological order,
which is the computation tape. Gradients are stored on leaf tensors only and
accumulate across calls until ``zero_grad``.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import NonDeterministicError, ShapeError, ValidationError

EPS = 1e-7

Array = np.ndarray


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[Array] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return swap_last(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: Array, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if not np.all(np.isfinite(data)):
        raise FloatingPointError("operation produced non-finite values")
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- backward


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that ``loss`` depends on."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(
        ad / bd,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)),
    )


def power(x: Tensor, exponent: float) -> Tensor:
    xd = x.data
    return _make(xd**exponent, (x,), lambda g: (g * exponent * xd ** (exponent - 1),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def sigmoid(x: Tensor) -> Tensor:
    """Standard logistic function 1 / (1 + exp(-x)), computed without overflow."""
    xd = x.data
    z = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    keep = x.data > 0
    return _make(np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------- shape ops


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / float(count))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def swap_last(x: Tensor) -> Tensor:
    return _make(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def broadcast(v: Tensor, shape: Sequence[int], axis: int = -1) -> Tensor:
    """Replicate ``v`` along one new axis inserted at ``axis`` to reach ``shape``.

    With the default axis a vector of length n becomes an n x m matrix whose
    rows are constant; ``axis=-2`` turns an m-vector into k identical rows.
    The gradient sums over the replicated axis.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) != v.ndim + 1:
        raise ShapeError(f"cannot broadcast {v.shape} to {shape}: expected one new axis")
    ax = axis % len(shape)
    expected = shape[:ax] + shape[ax + 1 :]
    if expected != v.shape:
        raise ShapeError(f"cannot broadcast {v.shape} to {shape} along axis {axis}")
    out = np.broadcast_to(np.expand_dims(v.data, ax), shape).copy()
    return _make(out, (v,), lambda g: (g.sum(axis=ax),))


def index_select(x: Tensor, index) -> Tensor:
    """Basic or advanced indexing; the gradient scatters back with ``np.add.at``."""
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(x.data[index]), (x,), bw)


def gather(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    return index_select(table, np.asarray(ids, dtype=np.intp))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batching over leading ones."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), bw)


def softmax(x: Tensor, axis: int = -1, mask: Optional[Array] = None) -> Tensor:
    """Numerically stable softmax; entries where ``mask`` is False get weight 0."""
    xd = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        shifted = np.where(mask, xd, -np.inf)
        top = shifted.max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(shifted - top), 0.0)
    else:
        e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/(1-rate)."""
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------- losses


def _targets(targets, shape) -> Array:
    y = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=np.float64)
    if y.shape != shape:
        raise ShapeError(f"target shape {y.shape} does not match prediction shape {shape}")
    return y


def bce_loss(targets, probs: Tensor, eps: float = EPS) -> Tensor:
    """Binary cross entropy summed over the label axis and averaged over the batch.

    Probabilities are clamped to [eps, 1 - eps] before the log.
    """
    y = _targets(targets, probs.shape)
    p = np.clip(probs.data, eps, 1.0 - eps)
    inside = (probs.data >= eps) & (probs.data <= 1.0 - eps)
    n = 1 if probs.ndim <= 1 else int(np.prod(probs.shape[:-1]))
    value = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum() / n

    def bw(g):
        dp = -(y / p - (1.0 - y) / (1.0 - p)) * inside / n
        return (g * dp,)

    return _make(np.asarray(value), (probs,), bw)


def kl_divergence(d, p: Tensor, eps: float = EPS, tol: float = 1e-6) -> Tensor:
    """sum_j d_j ln(d_j / p_j) with 0 ln 0 = 0; batched rows are averaged.

    ``d`` is a constant target distribution along the last axis. ``p`` is
    clamped to [eps, 1] and need not be normalised.
    """
    dd = _targets(d, p.shape)
    sums = dd.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > tol) or np.any(dd < 0):
        raise ValidationError(f"target distribution must be non-negative and sum to 1, got sums {sums}")
    pc = np.clip(p.data, eps, 1.0)
    inside = p.data >= eps
    n = 1 if p.ndim <= 1 else int(np.prod(p.shape[:-1]))
    pos = dd > 0
    terms = np.where(pos, dd * (np.log(np.where(pos, dd, 1.0)) - np.log(pc)), 0.0)
    value = terms.sum() / n

    def bw(g):
        return (g * (-dd / pc) * inside / n,)

    return _make(np.asarray(value), (p,), bw)


# ---------------------------------------------------------------- gradient check


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-4,
    skip_below: float = 1e-6,
) -> float:
    """Compare analytic gradients of scalar ``f`` at ``x`` with central differences.

    Returns the max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|).
    Coordinates with |x_i| < ``skip_below`` are skipped, since relu-style kinks
    sit at zero and have no derivative there. Pass ``skip_below=0`` to check
    every coordinate.
    """
    x.requires_grad = True
    first, second = f(x), f(x)
    if first.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {first.shape}")
    if not np.array_equal(first.data, second.data):
        raise NonDeterministicError("function returned different values for identical input")
    x.grad = None
    first.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    worst = 0.0
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        if abs(original) < skip_below:
            continue
        flat[i] = original + eps
        up = float(f(x).data)
        flat[i] = original - eps
        down = float(f(x).data)
        flat[i] = original
        numeric = (up - down) / (2.0 * eps)
        a = float(analytic.reshape(-1)[i])
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    x.grad = None
    return worst


def glorot(rng: np.random.Generator, shape: Sequence[int], fan_in: int, fan_out: int) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=tuple(shape)), requires_grad=True)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
