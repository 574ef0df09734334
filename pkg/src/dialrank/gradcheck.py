"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad

__all__ = ["numeric_gradient", "max_rel_error", "check_gradients"]


def numeric_gradient(f, x: Tensor, step: float = 1e-5) -> np.ndarray:
    """d f() / d x by central differences, perturbing x.data in place.

    ``f`` must rebuild its forward pass on every call so it sees the
    perturbed values.
    """
    flat = x.data.reshape(-1)
    g = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f().data)
            flat[i] = orig - step
            fm = float(f().data)
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * step)
    return g.reshape(x.data.shape)


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst elementwise |a - n| / max(1, |a|, |n|).

    The unit floor makes the metric absolute near zero, where pure relative
    error is meaningless.
    """
    diff = np.abs(analytic - numeric)
    if diff.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((diff / denom).max())


def check_gradients(f, wrt, step: float = 1e-5) -> float:
    """Backprop f() and compare every tensor in ``wrt`` against finite
    differences. Returns the worst relative error across all of them."""
    for t in wrt:
        t.grad = None
    out = f()
    out.backward()
    worst = 0.0
    for t in wrt:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_gradient(f, t, step)
        worst = max(worst, max_rel_error(analytic, numeric))
    return worst
