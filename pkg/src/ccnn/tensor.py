"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array together with a ``requires_grad`` flag.
Every differentiable operation records one node on a thread-local tape;
``backward`` replays the tape in reverse insertion order, accumulating
gradients into ``.grad`` (sums over all uses of a tensor).  The tape is
freed after backward, so graphs are strictly one forward / one backward.

Two precisions are supported: float32 (training default) and float64
(verification).  An operation inherits the dtype of its operands, so a
graph stays in one precision end to end.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import erf, expit

from .errors import DimensionError, UsageError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

_state = threading.local()


def _tape():
    if not hasattr(_state, "tape"):
        _state.tape = []
        _state.enabled = True
    return _state.tape


def grad_enabled() -> bool:
    _tape()
    return _state.enabled


@contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation mode)."""
    _tape()
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def tape_size() -> int:
    return len(_tape())


def clear_tape():
    _tape().clear()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_leaf")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=False)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # operator sugar; all arithmetic routes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_const(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise UsageError("tensor/tensor division is not supported; "
                             "multiply by a reciprocal instead")
        return mul(self, 1.0 / float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self, axis=None):
        return tsum(self, axis=axis)

    def mean(self):
        return mean(self)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


def _as_const(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def from_op(out_data, inputs, backward) -> Tensor:
    """Wrap an operation result and register its backward rule.

    ``backward(g)`` must return one gradient array (or None) per input,
    aligned with ``inputs``.  Recording is skipped when grad mode is off
    or no input requires grad; the result is then a plain constant.
    """
    out = Tensor(out_data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._leaf = False
        _tape().append(_Node(out, tuple(inputs), backward))
    return out


def backward(loss: Tensor):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tape-tracked tensor.

    Returns a dict mapping each requires_grad leaf to its gradient array.
    The tape is consumed and cleared.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise UsageError("loss is not tape-tracked (no grad path to any parameter)")
    tape = _tape()
    loss.grad = np.ones_like(loss.data)
    leaves = {}
    try:
        for node in reversed(tape):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for t, gi in zip(node.inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                gi = np.asarray(gi, dtype=t.dtype)
                if gi.shape != t.data.shape:
                    raise DimensionError(
                        f"gradient shape {gi.shape} does not match tensor shape {t.data.shape}")
                if t.grad is None:
                    t.grad = gi.copy() if gi.base is not None else gi
                else:
                    t.grad = t.grad + gi
                if t._leaf:
                    leaves[id(t)] = (t, t.grad)
    finally:
        tape.clear()
    return {t: g for t, g in leaves.values()}


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_op(a, b, fwd, bwd_a, bwd_b):
    try:
        out = fwd(a.data, b.data)
    except ValueError:
        raise DimensionError(
            f"operand shapes {a.data.shape} and {b.data.shape} do not broadcast") from None

    def back(g):
        ga = _unbroadcast(bwd_a(g), a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(bwd_b(g), b.data.shape) if b.requires_grad else None
        return ga, gb

    return from_op(out, (a, b), back)


def add(a: Tensor, b) -> Tensor:
    b = _as_const(b, a)
    return _broadcast_op(a, b, np.add, lambda g: g, lambda g: g)


def sub(a: Tensor, b) -> Tensor:
    b = _as_const(b, a)
    return _broadcast_op(a, b, np.subtract, lambda g: g, lambda g: -g)


def mul(a: Tensor, b) -> Tensor:
    b = _as_const(b, a)
    ad, bd = a.data, b.data
    return _broadcast_op(a, b, np.multiply, lambda g: g * bd, lambda g: g * ad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return from_op(ad @ bd, (a, b), back)


def sin(a: Tensor) -> Tensor:
    ad = a.data
    return from_op(np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return from_op(out, (a,), lambda g: (g * out,))


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)
    return from_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU: x * Phi(x)."""
    ad = a.data
    phi = 0.5 * (1.0 + erf(ad / _SQRT2))
    out = ad * phi

    def back(g):
        dens = np.exp(-0.5 * ad * ad) * _INV_SQRT2PI
        return (g * (phi + ad * dens),)

    return from_op(out, (a,), back)


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    out = ad ** p
    return from_op(out, (a,), lambda g: (g * p * ad ** (p - 1.0),))


def tsum(a: Tensor, axis=None) -> Tensor:
    ad = a.data
    out = ad.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, ad.shape),)
        gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, ad.shape),)

    return from_op(out, (a,), back)


def mean(a: Tensor) -> Tensor:
    return tsum(a) / a.data.size


def reshape(a: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    ad = a.data
    return from_op(ad.reshape(shape), (a,), lambda g: (g.reshape(ad.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5,
               axis: int = -1) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis``, then affine.

    ``gamma`` and ``beta`` are 1-d with the length of the normalized axis
    (the channel axis).  Default axis matches the ``[..., C]`` layout.
    """
    if eps <= 0:
        raise UsageError("layer_norm eps must be positive")
    xd = x.data
    ax = axis % xd.ndim
    c = xd.shape[ax]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(
            f"gamma/beta must have shape ({c},), got {gamma.data.shape} and {beta.data.shape}")
    mu = xd.mean(axis=ax, keepdims=True)
    var = xd.var(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=xd.dtype))
    xhat = (xd - mu) * inv
    gshape = [1] * xd.ndim
    gshape[ax] = c
    gd = gamma.data.reshape(gshape)
    out = xhat * gd + beta.data.reshape(gshape)

    def back(g):
        ggam = (g * xhat).sum(axis=tuple(i for i in range(xd.ndim) if i != ax)) \
            if gamma.requires_grad else None
        gbet = g.sum(axis=tuple(i for i in range(xd.ndim) if i != ax)) \
            if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gy = g * gd
            m1 = gy.mean(axis=ax, keepdims=True)
            m2 = (gy * xhat).mean(axis=ax, keepdims=True)
            gx = (gy - m1 - xhat * m2) * inv
        return gx, ggam, gbet

    return from_op(out, (x, gamma, beta), back)


def channel_linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Pointwise linear map over the channel axis: (B, C, *sp) -> (B, O, *sp)."""
    xd, wd = x.data, w.data
    if xd.ndim < 2 or wd.ndim != 2 or wd.shape[1] != xd.shape[1]:
        raise DimensionError(
            f"channel_linear: input {xd.shape} incompatible with weight {wd.shape}")
    sp = xd.shape[2:]
    sp_axes = tuple(range(2, xd.ndim))
    x2 = xd.reshape(xd.shape[:2] + (-1,))
    out = np.matmul(wd, x2).reshape((xd.shape[0], wd.shape[0]) + sp)
    if b is not None:
        out = out + b.data.reshape((1, -1) + (1,) * len(sp))

    def back(g):
        g2 = g.reshape(g.shape[:2] + (-1,))
        gx = None
        if x.requires_grad:
            gx = np.matmul(wd.T, g2).reshape(xd.shape)
        gw = None
        if w.requires_grad:
            gw = np.matmul(g2, x2.transpose(0, 2, 1)).sum(axis=0)
        gb = None
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0,) + sp_axes)
        return gx, gw, gb

    inputs = (x, w, b) if b is not None else (x, w)
    if b is None:
        return from_op(out, inputs, lambda g: back(g)[:2])
    return from_op(out, inputs, back)


def spatial_mean(x: Tensor) -> Tensor:
    """Global average pool: (B, C, *sp) -> (B, C)."""
    xd = x.data
    if xd.ndim < 3:
        raise DimensionError(f"spatial_mean expects (B, C, spatial...), got {xd.shape}")
    sp_axes = tuple(range(2, xd.ndim))
    n = int(np.prod([xd.shape[i] for i in sp_axes]))
    out = xd.mean(axis=sp_axes)

    def back(g):
        gg = g.reshape(g.shape + (1,) * len(sp_axes))
        return (np.broadcast_to(gg / n, xd.shape).astype(xd.dtype, copy=False),)

    return from_op(out, (x,), back)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise UsageError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.dtype)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = keep * scale
    return from_op(x.data * mask, (x,), lambda g: (g * mask,))
