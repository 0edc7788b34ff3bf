"""Coordinate-conditioned kernel generation.

A convolutional kernel is produced by evaluating a small multiplicative
filter network at K normalized grid positions in [-1, 1]^D.  Each hidden
stage is a Gabor unit — a sinusoid with frequency prior omega0 times an
anisotropic Gaussian envelope — and stages are combined through the
multiplicative recurrence h_{l+1} = (W_l h_l + b_l) * g_{l+1}(c).  The
parameter count is a function of (D, hidden, out_channels) only, never
of K, which is what makes kernels of arbitrary length affordable.

A learnable Gaussian mask (mean mu, width sigma per axis, sigma kept
positive by storing log sigma) is multiplied onto the generated kernel
so the effective kernel size is trainable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError, UsageError
from .tensor import Tensor

# probe grid sizes (per dimensionality) used to normalize the output
# variance of a freshly initialized generator
_PROBE_POINTS = {1: (257,), 2: (17, 17)}


@dataclass
class CoordinateGrid:
    """K positions in [-1, 1]^D, row-major over axes.

    For causal 1D use, index 0 is the oldest position (coordinate -1)
    and the last index is the current one (coordinate +1); the flag is
    orientation metadata only and does not change the values.
    """

    d: int
    sizes: tuple[int, ...]
    points: Tensor
    causal: bool = False

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def _axis_coords(n: int) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, n)


def make_grid(d: int, sizes, causal: bool = False, dtype=np.float64) -> CoordinateGrid:
    """Regular coordinate grid spanning [-1, 1] along each of d axes."""
    if d not in (1, 2):
        raise UsageError(f"grid dimensionality must be 1 or 2, got {d}")
    if isinstance(sizes, (int, np.integer)):
        sizes = (int(sizes),) * d
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != d:
        raise UsageError(f"expected {d} axis sizes, got {sizes}")
    if any(s < 1 for s in sizes):
        raise UsageError(f"grid sizes must be >= 1, got {sizes}")
    axes = [_axis_coords(s) for s in sizes]
    if d == 1:
        pts = axes[0][:, None]
    else:
        g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        pts = np.stack([g0.reshape(-1), g1.reshape(-1)], axis=1)
    return CoordinateGrid(d=d, sizes=sizes,
                          points=Tensor(pts.astype(dtype)), causal=causal)


def grid_from_points(points, causal: bool = False) -> CoordinateGrid:
    """Wrap arbitrary (K, D) coordinates, e.g. for irregular sampling."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise UsageError(f"expected (K, D) coordinates, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise UsageError("coordinates must be finite")
    return CoordinateGrid(d=pts.shape[1], sizes=(pts.shape[0],),
                          points=Tensor(pts), causal=causal)


class KernelGenerator:
    """3-stage multiplicative Gabor network mapping coordinates to kernel rows."""

    def __init__(self, d, hidden, out_channels, omega0, params, mode="gabor",
                 n_layers=3):
        self.d = d
        self.hidden = hidden
        self.out_channels = out_channels
        self.omega0 = float(omega0)
        self.n_layers = n_layers
        self.mode = mode
        self.init_scale = 1.0
        self.p = params  # name -> Tensor

    def parameters(self) -> dict[str, Tensor]:
        return self.p

    def param_count(self) -> int:
        return sum(t.size for t in self.p.values())

    def _filter(self, coords: Tensor, l: int) -> Tensor:
        c = coords
        k = c.shape[0]
        lin = T.matmul(c, T.transpose(self.p[f"freq{l}"], (1, 0)))
        wave = T.sin(lin * self.omega0 + self.p[f"phase{l}"])
        if self.mode == "sine":
            return wave
        mu = self.p[f"gab_mu{l}"]
        c2 = T.reshape(T.tsum(c * c, axis=1), (k, 1))
        m2 = T.tsum(mu * mu, axis=1)
        cross = T.matmul(c, T.transpose(mu, (1, 0)))
        sqdist = c2 + m2 - cross * 2.0
        gam = self.p[f"gamma_sqrt{l}"]
        envelope = T.exp(sqdist * (gam * gam) * -0.5)
        return envelope * wave

    def generate(self, grid: CoordinateGrid) -> Tensor:
        """Evaluate the network at every grid point: (K, out_channels)."""
        if grid.d != self.d:
            raise UsageError(
                f"grid dimensionality {grid.d} does not match generator ({self.d})")
        pts = grid.points.data
        if not np.all(np.isfinite(pts)):
            raise UsageError("coordinates must be finite")
        c = grid.points if grid.points.dtype == self._dtype() else \
            Tensor(pts.astype(self._dtype()))
        h = self._filter(c, 0)
        for l in range(1, self.n_layers):
            pre = T.matmul(h, T.transpose(self.p[f"lin{l - 1}_w"], (1, 0))) \
                + self.p[f"lin{l - 1}_b"]
            h = pre * self._filter(c, l)
        out = T.matmul(h, T.transpose(self.p["out_w"], (1, 0))) + self.p["out_b"]
        if self.init_scale != 1.0:
            out = out * self.init_scale
        return out

    def mask(self, grid: CoordinateGrid) -> Tensor:
        """Gaussian mask values at the grid points: (K, 1)."""
        c = Tensor(grid.points.data.astype(self._dtype()))
        mu = self.p["mask_mu"]
        inv_var = T.exp(self.p["mask_log_sigma"] * -2.0)
        sq = T.tsum((c - mu) * (c - mu) * inv_var, axis=1)
        return T.reshape(T.exp(sq * -0.5), (grid.n_points, 1))

    def masked_kernel(self, grid: CoordinateGrid) -> Tensor:
        return self.generate(grid) * self.mask(grid)

    def _dtype(self):
        return self.p["out_w"].dtype

    def astype(self, dtype) -> "KernelGenerator":
        g = KernelGenerator(self.d, self.hidden, self.out_channels, self.omega0,
                            {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad)
                             for k, v in self.p.items()},
                            mode=self.mode, n_layers=self.n_layers)
        g.init_scale = self.init_scale
        return g


def apply_gaussian_mask(kernel: Tensor, coords: CoordinateGrid,
                        mu: Tensor, sigma: Tensor) -> Tensor:
    """Multiply kernel row i by exp(-1/2 sum_d (c_id - mu_d)^2 / sigma_d^2)."""
    if np.any(sigma.data <= 0):
        raise UsageError(f"mask sigma must be positive, got {sigma.data}")
    if mu.shape != (coords.d,) or sigma.shape != (coords.d,):
        raise DimensionError(
            f"mask parameters must have shape ({coords.d},), got "
            f"{mu.shape} and {sigma.shape}")
    c = Tensor(coords.points.data.astype(kernel.dtype))
    diff = c - mu
    sq = T.tsum(diff * diff * T.power(sigma, -2.0), axis=1)
    m = T.reshape(T.exp(sq * -0.5), (coords.n_points, 1))
    return kernel * m


def init_generator(d: int, hidden: int, out_channels: int, omega0: float,
                   seed: int, n_layers: int = 3, mode: str = "gabor",
                   dtype=np.float32) -> KernelGenerator:
    """Draw a fresh generator.

    Filter frequencies are scaled so the product of n_layers stages has
    an effective bandwidth of omega0; linear stages are fan-in uniform.
    The output layer is then normalized so the generated kernel has unit
    variance on a probe grid — the starting point that
    ``rescale_last_layer`` corrects down to the convolutional target.
    The mask starts centered (mu = 0) with sigma = 1, spanning the grid.
    """
    if d not in (1, 2):
        raise UsageError(f"dimensionality must be 1 or 2, got {d}")
    if hidden < 1 or out_channels < 1:
        raise UsageError("hidden and out_channels must be >= 1")
    if omega0 <= 0:
        raise UsageError(f"omega0 must be positive, got {omega0}")
    if mode not in ("gabor", "sine"):
        raise UsageError(f"unknown generator mode {mode!r}")
    rng = np.random.default_rng(seed)
    p: dict[str, Tensor] = {}

    def param(name, arr):
        p[name] = Tensor(arr.astype(dtype), requires_grad=True)

    freq_scale = 1.0 / math.sqrt(n_layers)
    for l in range(n_layers):
        param(f"freq{l}", rng.standard_normal((hidden, d)) * freq_scale)
        param(f"phase{l}", rng.uniform(-math.pi, math.pi, size=hidden))
        param(f"gamma_sqrt{l}", np.sqrt(np.abs(rng.standard_normal(hidden)))
              if mode == "gabor" else np.zeros(hidden))
        param(f"gab_mu{l}", rng.uniform(-1.0, 1.0, size=(hidden, d)))
    bound = 1.0 / math.sqrt(hidden)
    for l in range(n_layers - 1):
        param(f"lin{l}_w", rng.uniform(-bound, bound, size=(hidden, hidden)))
        param(f"lin{l}_b", rng.uniform(-bound, bound, size=hidden))
    param("out_w", rng.uniform(-bound, bound, size=(out_channels, hidden)))
    param("out_b", rng.uniform(-bound, bound, size=out_channels))
    param("mask_mu", np.zeros(d))
    param("mask_log_sigma", np.zeros(d))

    gen = KernelGenerator(d, hidden, out_channels, omega0, p,
                          mode=mode, n_layers=n_layers)

    # normalize the raw output to unit variance on a probe grid; without
    # this the multiplicative envelopes damp the output ~100x below the
    # unit-variance baseline the rescaling step assumes
    probe = make_grid(d, _PROBE_POINTS[d])
    with T.no_grad():
        sample = gen.generate(probe).data
    std = float(sample.std())
    if std > 0:
        p["out_w"].data /= np.asarray(std, dtype=dtype)
        p["out_b"].data /= np.asarray(std, dtype=dtype)
    return gen


def rescale_last_layer(gen: KernelGenerator, gain: float, in_channels: int,
                       kernel_size: int) -> None:
    """Set the output scale to gain / sqrt(in_channels * kernel_size).

    Brings Var(kernel) down from ~1 to the discrete-convolution target
    gain^2 / (in_channels * kernel_size), which keeps feature variance
    flat across layers instead of growing by that factor per layer.
    """
    if in_channels < 1 or kernel_size < 1:
        raise UsageError("in_channels and kernel_size must be >= 1")
    if gain <= 0:
        raise UsageError(f"gain must be positive, got {gain}")
    gen.init_scale = gain / math.sqrt(in_channels * kernel_size)


def dump_kernel_csv(gen: KernelGenerator, grid: CoordinateGrid, path) -> None:
    """Write the masked kernel as CSV rows (coord_0[, coord_1], channel, value)."""
    with T.no_grad():
        kernel = gen.masked_kernel(grid).data
    pts = grid.points.data
    cols = [f"coord_{i}" for i in range(grid.d)] + ["channel", "value"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(pts.shape[0]):
            coord = ",".join(f"{v:.10g}" for v in pts[i])
            for ch in range(kernel.shape[1]):
                fh.write(f"{coord},{ch},{kernel[i, ch]:.10g}\n")
