from functools import lru_cache

import numpy as np

from .exceptions import ShapeError
from .models import Mask

MODES = ('nearest', 'bilinear')


@lru_cache(maxsize=256)
def _interpolation_matrix(in_size: int, out_size: int, mode: str) -> np.ndarray:
    matrix = np.zeros((out_size, in_size), dtype=np.float64)
    scale = in_size / out_size
    rows = np.arange(out_size)
    if mode == 'nearest':
        source = np.minimum(np.floor((rows + 0.5) * scale).astype(int), in_size - 1)
        matrix[rows, source] = 1.0
    else:
        # Half-pixel centres, corners not aligned, edges clamped.
        source = np.clip((rows + 0.5) * scale - 0.5, 0.0, in_size - 1)
        lower = np.floor(source).astype(int)
        upper = np.minimum(lower + 1, in_size - 1)
        weight = source - lower
        np.add.at(matrix, (rows, lower), 1.0 - weight)
        np.add.at(matrix, (rows, upper), weight)
    matrix.flags.writeable = False
    return matrix


def interpolation_matrix(in_size: int, out_size: int, mode: str = 'bilinear') -> np.ndarray:
    """Row-stochastic (out_size x in_size) matrix mapping a 1-D signal to a new length."""
    if mode not in MODES:
        raise ValueError(f"Unknown resampling mode {mode!r}")
    if in_size < 1 or out_size < 1:
        raise ShapeError(f"Cannot resample between sizes {in_size} and {out_size}")
    return _interpolation_matrix(int(in_size), int(out_size), mode)


def resample_grid(values: np.ndarray, out_h: int, out_w: int, mode: str = 'bilinear') -> np.ndarray:
    """Resample the last two axes of ``values`` separably; leading axes are batch axes."""
    values = np.asarray(values, dtype=np.float64)
    rows = interpolation_matrix(values.shape[-2], out_h, mode)
    cols = interpolation_matrix(values.shape[-1], out_w, mode)
    return rows @ values @ cols.T


def resample_grid_backward(grad: np.ndarray, in_h: int, in_w: int, mode: str = 'bilinear') -> np.ndarray:
    """Adjoint of :func:`resample_grid`, mapping output gradients back to the input grid."""
    rows = interpolation_matrix(in_h, grad.shape[-2], mode)
    cols = interpolation_matrix(in_w, grad.shape[-1], mode)
    return rows.T @ grad @ cols


def resample_mask(mask: Mask, out_h: int, out_w: int, mode: str = 'nearest') -> Mask:
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"Output dims must be positive, got {out_h}x{out_w}")
    if mask.spatial == (out_h, out_w):
        return mask
    resampled = resample_grid(mask.values(), out_h, out_w, mode)
    return Mask(np.clip(resampled, 0.0, 1.0))
