"""Numerical checking utilities: finite differences and error metrics."""

import numpy as np

from .tensor import no_grad


def max_rel_err(a, b, floor=1e-8):
    """Elementwise relative error, max over entries.

    Denominator is max(|a|, |b|, floor) per element.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def finite_difference_gradients(f, params, h=1e-5):
    """Central-difference gradients of the scalar ``f()`` w.r.t. ``params``.

    ``f`` must be a closure over the parameter tensors; each entry is
    perturbed in place (and restored) while ``f`` is re-evaluated with
    the tape disabled.  Use float64 parameters: the h^2 truncation and
    cancellation noise make float32 checks meaningless.
    """
    grads = []
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            g = np.zeros(flat.size, dtype=np.float64)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f())
                flat[i] = orig - h
                fm = float(f())
                flat[i] = orig
                g[i] = (fp - fm) / (2.0 * h)
            grads.append(g.reshape(p.data.shape))
    return grads
