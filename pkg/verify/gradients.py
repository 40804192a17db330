"""Central finite differences and the relative-error measure used to compare gradients."""
import numpy as np

from .exceptions import NonFiniteEvaluationError

STEP = 1e-4
TOLERANCE = 1e-3


def finite_diff_grad(f, x, step: float = STEP) -> np.ndarray:
    """``(f(x + h e_i) - f(x - h e_i)) / 2h`` for every coordinate of ``x``.

    ``x`` may have any shape; the result has the same shape. ``f`` receives a
    float64 copy and never sees the caller's array.
    """
    point = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(point)
    flat, flat_grad = point.reshape(-1), grad.reshape(-1)
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + step
        upper = float(f(point.copy()))
        flat[index] = original - step
        lower = float(f(point.copy()))
        flat[index] = original
        if not np.isfinite(upper):
            raise NonFiniteEvaluationError(np.unravel_index(index, point.shape), upper)
        if not np.isfinite(lower):
            raise NonFiniteEvaluationError(np.unravel_index(index, point.shape), lower)
        flat_grad[index] = (upper - lower) / (2.0 * step)
    return grad


def relative_error(analytic, numeric) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)
