"""Continuous-kernel convolutions: FFT path, direct path, separable layers.

Conventions
-----------
1D kernels are stored in grid order: index 0 is the oldest position
(coordinate -1) and index Lk-1 weights the current input position
(coordinate +1).  Causal output y[t] therefore depends on x[t'] for
t' <= t only, with zero padding on the left.  2D kernels are centered
(odd extents, coordinate (0, 0) at the middle tap).

The FFT path zero-pads both operands to the next power of two at or
above L + Lk - 1, multiplies the real-transform spectra (accumulating
over input channels), inverse-transforms, and crops.  It is fully
differentiable; the gradients are computed with conjugate spectra at
the same padded size.  The direct path is the quadratic reference
implementation (compiled when the extension is available) and is
forward-only.

Padded transform sizes are memoized in a plan cache shared across
layers and steps; lookups are lock-free, insertion takes a lock.  The
transforms themselves are numpy's pocketfft, which caches twiddle
factors per length internally.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backend import direct as _direct
from .errors import DimensionError, UsageError
from .kernelgen import KernelGenerator, make_grid
from .tensor import Tensor, from_op

_plan_cache: dict = {}
_plan_lock = threading.Lock()


def fft_plan(min_len: int, dtype) -> int:
    """Padded transform length (next power of two >= min_len)."""
    key = (int(min_len), np.dtype(dtype).str)
    n = _plan_cache.get(key)
    if n is None:
        with _plan_lock:
            n = _plan_cache.setdefault(key, 1 << max(int(min_len) - 1, 0).bit_length())
    return n


def plan_cache_size() -> int:
    return len(_plan_cache)


def _no_tape(*tensors, what):
    if T.grad_enabled() and any(t.requires_grad for t in tensors):
        raise UsageError(
            f"{what} is forward-only; use the fft path for gradient tracking")


def _check1d(x: Tensor, k: Tensor, causal: bool, depthwise: bool):
    if x.ndim != 3:
        raise DimensionError(f"expected x of shape (B, C, L), got {x.shape}")
    if depthwise:
        if k.ndim != 2 or k.shape[0] != x.shape[1]:
            raise DimensionError(
                f"depthwise kernel {k.shape} does not match input {x.shape}")
    else:
        if k.ndim != 3 or k.shape[1] != x.shape[1]:
            raise DimensionError(
                f"kernel {k.shape} does not match input {x.shape}")
    lk, l = k.shape[-1], x.shape[-1]
    if causal and lk > l:
        raise DimensionError(
            f"causal kernel length {lk} exceeds input length {l}")
    if not causal and lk % 2 == 0:
        raise UsageError(f"centered mode needs an odd kernel extent, got {lk}")


def _check2d(x: Tensor, k: Tensor, depthwise: bool):
    if x.ndim != 4:
        raise DimensionError(f"expected x of shape (B, C, H, W), got {x.shape}")
    if depthwise:
        if k.ndim != 3 or k.shape[0] != x.shape[1]:
            raise DimensionError(
                f"depthwise kernel {k.shape} does not match input {x.shape}")
    else:
        if k.ndim != 4 or k.shape[1] != x.shape[1]:
            raise DimensionError(
                f"kernel {k.shape} does not match input {x.shape}")
    hk, wk = k.shape[-2], k.shape[-1]
    if hk % 2 == 0 or wk % 2 == 0:
        raise UsageError(f"centered 2d kernels need odd extents, got {hk}x{wk}")


# ---------------------------------------------------------------- 1D FFT

def _fft1(x: Tensor, k: Tensor, causal: bool, depthwise: bool) -> Tensor:
    xd, kd = x.data, k.data
    l, lk = xd.shape[-1], kd.shape[-1]
    off = 0 if causal else (lk - 1) // 2
    n = fft_plan(l + lk - 1, xd.dtype)
    if depthwise:
        fwd = lambda a, b: a * b
        dx = lambda g, kr: g * np.conj(kr)
        dk = lambda g, a: (np.conj(g) * a).sum(axis=0)
    else:
        fwd = lambda a, b: np.einsum("bcf,ocf->bof", a, b)
        dx = lambda g, kr: np.einsum("bof,ocf->bcf", g, np.conj(kr))
        dk = lambda g, a: np.einsum("bof,bcf->ocf", np.conj(g), a)

    xs = np.fft.rfft(xd, n)
    krs = np.fft.rfft(kd[..., ::-1], n)
    out = np.fft.irfft(fwd(xs, krs), n)[..., off:off + l]

    def back(g):
        gs = np.fft.rfft(g, n)
        gx = gk = None
        if x.requires_grad:
            gx = np.roll(np.fft.irfft(dx(gs, krs), n), off, axis=-1)[..., :l]
        if k.requires_grad:
            gk = np.roll(np.fft.irfft(dk(gs, xs), n),
                         lk - 1 - off, axis=-1)[..., :lk]
        return gx, gk

    return from_op(out, (x, k), back)


def conv1d_fft(x: Tensor, k: Tensor, causal: bool = True) -> Tensor:
    """FFT convolution, kernel (C_out, C_in, Lk) -> (B, C_out, L)."""
    _check1d(x, k, causal, depthwise=False)
    return _fft1(x, k, causal, depthwise=False)


def dwconv1d_fft(x: Tensor, k: Tensor, causal: bool = True) -> Tensor:
    """Channelwise FFT convolution, kernel (C, Lk) -> (B, C, L)."""
    _check1d(x, k, causal, depthwise=True)
    return _fft1(x, k, causal, depthwise=True)


# ------------------------------------------------------------- 1D direct

def _direct1(xd: np.ndarray, kd: np.ndarray, causal: bool, depthwise: bool):
    fn = _direct.conv1d_depthwise if depthwise else _direct.conv1d_full
    if causal:
        return fn(xd, kd)
    a = (kd.shape[-1] - 1) // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (0, a)))
    return fn(xp, kd)[..., a:]


def conv1d_direct(x: Tensor, k: Tensor, causal: bool = True) -> Tensor:
    """Quadratic reference convolution; numerically equals conv1d_fft."""
    _check1d(x, k, causal, depthwise=False)
    _no_tape(x, k, what="conv1d_direct")
    return Tensor(_direct1(x.data, k.data, causal, depthwise=False))


def dwconv1d_direct(x: Tensor, k: Tensor, causal: bool = True) -> Tensor:
    _check1d(x, k, causal, depthwise=True)
    _no_tape(x, k, what="dwconv1d_direct")
    return Tensor(_direct1(x.data, k.data, causal, depthwise=True))


# ---------------------------------------------------------------- 2D FFT

def _fft2(x: Tensor, k: Tensor, depthwise: bool) -> Tensor:
    xd, kd = x.data, k.data
    h, w = xd.shape[-2:]
    hk, wk = kd.shape[-2:]
    ch, cw = (hk - 1) // 2, (wk - 1) // 2
    n1 = fft_plan(h + hk - 1, xd.dtype)
    n2 = fft_plan(w + wk - 1, xd.dtype)
    axes = (-2, -1)
    if depthwise:
        fwd = lambda a, b: a * b
        dx = lambda g, kr: g * np.conj(kr)
        dk = lambda g, a: (np.conj(g) * a).sum(axis=0)
    else:
        fwd = lambda a, b: np.einsum("bcfg,ocfg->bofg", a, b)
        dx = lambda g, kr: np.einsum("bofg,ocfg->bcfg", g, np.conj(kr))
        dk = lambda g, a: np.einsum("bofg,bcfg->ocfg", np.conj(g), a)

    xs = np.fft.rfftn(xd, s=(n1, n2), axes=axes)
    krs = np.fft.rfftn(kd[..., ::-1, ::-1], s=(n1, n2), axes=axes)
    full = np.fft.irfftn(fwd(xs, krs), s=(n1, n2), axes=axes)
    out = full[..., ch:ch + h, cw:cw + w]

    def back(g):
        gs = np.fft.rfftn(g, s=(n1, n2), axes=axes)
        gx = gk = None
        if x.requires_grad:
            gx = np.roll(np.fft.irfftn(dx(gs, krs), s=(n1, n2), axes=axes),
                         (ch, cw), axis=axes)[..., :h, :w]
        if k.requires_grad:
            gk = np.roll(np.fft.irfftn(dk(gs, xs), s=(n1, n2), axes=axes),
                         (ch, cw), axis=axes)[..., :hk, :wk]
        return gx, gk

    return from_op(out, (x, k), back)


def conv2d_fft(x: Tensor, k: Tensor) -> Tensor:
    """Centered FFT convolution, kernel (C_out, C_in, Hk, Wk) -> (B, C_out, H, W)."""
    _check2d(x, k, depthwise=False)
    return _fft2(x, k, depthwise=False)


def dwconv2d_fft(x: Tensor, k: Tensor) -> Tensor:
    _check2d(x, k, depthwise=True)
    return _fft2(x, k, depthwise=True)


def conv2d_direct(x: Tensor, k: Tensor) -> Tensor:
    _check2d(x, k, depthwise=False)
    _no_tape(x, k, what="conv2d_direct")
    return Tensor(_direct.conv2d_full(x.data, k.data))


def dwconv2d_direct(x: Tensor, k: Tensor) -> Tensor:
    _check2d(x, k, depthwise=True)
    _no_tape(x, k, what="dwconv2d_direct")
    return Tensor(_direct.conv2d_depthwise(x.data, k.data))


# ------------------------------------------------------- layer composition

@dataclass
class ConvLayerSpec:
    """One continuous convolution layer.

    kernel_points is the per-axis kernel extent; None means "as big as
    the input".  2D extents are forced odd by dropping one point.
    """

    d: int
    n_in: int
    n_out: int
    separable: bool = True
    causal: bool = True
    kernel_points: tuple[int, ...] | int | None = None

    def __post_init__(self):
        if self.d not in (1, 2):
            raise UsageError(f"layer dimensionality must be 1 or 2, got {self.d}")
        if self.causal and self.d != 1:
            raise UsageError("causal mode is only defined for 1d layers")
        if isinstance(self.kernel_points, int):
            self.kernel_points = (self.kernel_points,) * self.d

    def generator_width(self) -> int:
        return self.n_in if self.separable else self.n_in * self.n_out

    def resolve_extents(self, spatial: tuple[int, ...]) -> tuple[int, ...]:
        want = self.kernel_points or spatial
        out = []
        for axis, (e, s) in enumerate(zip(want, spatial)):
            e = min(int(e), int(s))
            if not self.causal and e % 2 == 0:
                e -= 1
            if e < 1:
                raise UsageError(f"kernel extent collapsed to zero on axis {axis}")
            out.append(e)
        return tuple(out)


def separable_conv(x: Tensor, spec: ConvLayerSpec, gen: KernelGenerator,
                   pointwise: Tensor | None, bias: Tensor | None,
                   scale: float = 1.0) -> Tensor:
    """Generate the kernel, convolve channelwise, then mix channels.

    ``scale`` multiplies the generated kernel and carries the
    cross-resolution factor of ``resolution_rescale`` at inference time.
    """
    if gen.out_channels != spec.generator_width():
        raise UsageError(
            f"generator width {gen.out_channels} does not match layer "
            f"requirement {spec.generator_width()}")
    if x.ndim != spec.d + 2:
        raise DimensionError(
            f"{spec.d}d layer got input of shape {x.shape}")
    spatial = x.shape[2:]
    extents = spec.resolve_extents(spatial)
    grid = make_grid(spec.d, extents, causal=spec.causal)
    kern = gen.masked_kernel(grid)
    if scale != 1.0:
        kern = kern * scale
    if spec.separable:
        kern = T.reshape(T.transpose(kern, (1, 0)), (spec.n_in,) + extents)
        h = dwconv1d_fft(x, kern, causal=spec.causal) if spec.d == 1 \
            else dwconv2d_fft(x, kern)
        if pointwise is None:
            raise UsageError("separable layers need a pointwise map")
        return T.channel_linear(h, pointwise, bias)
    kern = T.reshape(T.transpose(kern, (1, 0)),
                     (spec.n_out, spec.n_in) + extents)
    h = conv1d_fft(x, kern, causal=spec.causal) if spec.d == 1 \
        else conv2d_fft(x, kern)
    if bias is not None:
        h = h + T.reshape(bias, (1, spec.n_out) + (1,) * spec.d)
    return h


def resolution_rescale(y: Tensor, r_train: float, r_test: float, d: int) -> Tensor:
    """Scale a response computed at test resolution back to the train one.

    A convolution evaluated at r_test has (r_test / r_train)^d as many
    kernel taps inside the same continuous support, so its magnitude is
    off by that factor; multiplying by (r_train / r_test)^d recovers the
    train-resolution response.
    """
    if r_train <= 0 or r_test <= 0:
        raise UsageError(
            f"resolutions must be positive, got {r_train} and {r_test}")
    factor = (float(r_train) / float(r_test)) ** d
    return y if factor == 1.0 else y * factor
