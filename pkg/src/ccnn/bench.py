"""Timing harness: direct vs FFT convolution, compiled vs numpy backends."""

from __future__ import annotations

import time

import numpy as np

from . import backend
from . import conv as CV
from .errors import UsageError
from .tensor import Tensor, no_grad

BENCH_HEADER = ["path", "length", "mean_ms", "std_ms"]


def _time_fn(fn, reps, warmup):
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return float(np.mean(samples)), float(np.std(samples))


def bench_case(d: int, length: int, channels: int = 32, reps: int = 20,
               warmup: int = 2, compare_backends: bool = False,
               dtype=np.float32):
    """Rows (path, length, mean_ms, std_ms) for one problem size.

    1d: channelwise causal convolution, full-length kernel, batch 1.
    2d: channelwise centered convolution, `length` is the image side.
    The direct row uses the active backend; with ``compare_backends``
    the numpy fallback is timed as its own row.
    """
    if reps < 1:
        raise UsageError("reps must be >= 1")
    rng = np.random.default_rng(0)
    if d == 1:
        x = Tensor(rng.standard_normal((1, channels, length)).astype(dtype))
        k = Tensor((rng.standard_normal((channels, length))
                    / np.sqrt(length)).astype(dtype))
        fft_fn = lambda: CV.dwconv1d_fft(x, k)
        direct_fn = lambda: CV.dwconv1d_direct(x, k)
        fallback_fn = lambda: backend.direct_fallback.conv1d_depthwise(
            x.data, k.data)
    elif d == 2:
        side = length
        ext = side if side % 2 == 1 else side - 1
        x = Tensor(rng.standard_normal((1, channels, side, side)).astype(dtype))
        k = Tensor((rng.standard_normal((channels, ext, ext))
                    / np.sqrt(ext * ext)).astype(dtype))
        fft_fn = lambda: CV.dwconv2d_fft(x, k)
        direct_fn = lambda: CV.dwconv2d_direct(x, k)
        fallback_fn = lambda: backend.direct_fallback.conv2d_depthwise(
            x.data, k.data)
    else:
        raise UsageError(f"dim must be 1 or 2, got {d}")

    rows = []
    with no_grad():
        mean, std = _time_fn(fft_fn, reps, warmup)
        rows.append(["fft", length, mean, std])
        mean, std = _time_fn(direct_fn, reps, warmup)
        rows.append([f"direct[{backend.backend_name()}]", length, mean, std])
        if compare_backends and backend.HAS_EXT:
            mean, std = _time_fn(fallback_fn, reps, warmup)
            rows.append(["direct[numpy]", length, mean, std])
    return rows


def run_bench(lengths, dims=(1,), channels: int = 32, reps: int = 20,
              warmup: int = 2, compare_backends: bool = False):
    if list(lengths) != sorted(lengths):
        raise UsageError("lengths must be sorted ascending")
    rows = []
    for d in dims:
        for length in lengths:
            rows.extend(bench_case(d, length, channels=channels, reps=reps,
                                   warmup=warmup,
                                   compare_backends=compare_backends))
    return rows


def write_bench_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(BENCH_HEADER) + "\n")
        for path_name, length, mean, std in rows:
            fh.write(f"{path_name},{length},{mean:.6f},{std:.6f}\n")
