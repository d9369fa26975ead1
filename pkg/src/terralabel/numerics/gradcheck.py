"""Central finite-difference gradient checking (runs in float64 mode)."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_gradient(f: Callable[[], Tensor], param: Tensor,
                     step: float = 1e-4) -> np.ndarray:
    """Central differences of scalar f with respect to every element of param."""
    grad = np.zeros_like(param.data, dtype=np.float64)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f().item()
        flat[i] = orig - step
        lo = f().item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst elementwise |a - n| / max(|a|, |n|, 1)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(f: Callable[[], Tensor], params: Sequence[Tensor],
                    step: float = 1e-4, tol: float = 1e-4) -> float:
    """Assert analytic grads of scalar ``f()`` match central differences.

    Returns the worst relative error observed across all parameters. The
    closure must rebuild the graph from ``params`` on every call.
    """
    for p in params:
        p.grad = None
    loss = f()
    loss.backward()
    worst = 0.0
    for p in params:
        assert p.grad is not None, "parameter unreachable from loss"
        analytic = p.grad.copy()
        numeric = numeric_gradient(f, p, step)
        err = max_relative_error(analytic, numeric)
        worst = max(worst, err)
        if err >= tol:
            raise AssertionError(
                f"gradient mismatch: rel err {err:.3e} >= {tol:.0e} "
                f"for parameter of shape {p.shape}")
    return worst
