"""Stand-in decoder: a 1x1 linear read-out of the holistic attention, sigmoid, then bilinear upsampling."""
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import expit

from attention.models import HolisticAttention
from episodes.models import FeatureMap, Mask
from episodes.resampling import resample_grid, resample_grid_backward

from .exceptions import LossShapeError
from .models import HeadParams


def decode_forward(holistic: np.ndarray, params: HeadParams, out_h: int, out_w: int):
    """``holistic`` is T x 2C x H x W; returns T x out_h x out_w probabilities and the cache."""
    if holistic.shape[1] != params.channels:
        raise LossShapeError(f"Head reads {params.channels} channels, holistic attention has {holistic.shape[1]}")
    height, width = holistic.shape[2:]
    if out_h < height or out_w < width:
        raise LossShapeError(f"Output {out_h}x{out_w} is smaller than the attention grid {height}x{width}")
    logits = np.einsum('tchw,c->thw', holistic, params.proj) + params.bias
    probabilities = expit(logits)
    output = resample_grid(probabilities, out_h, out_w, 'bilinear')
    return output, (holistic, params, probabilities)


def decode_backward(grad: np.ndarray, cache):
    holistic, params, probabilities = cache
    height, width = probabilities.shape[1:]
    grad_logits = resample_grid_backward(grad, height, width, 'bilinear') * probabilities * (1.0 - probabilities)
    return {
        'proj': np.einsum('thw,tchw->c', grad_logits, holistic),
        'bias': float(grad_logits.sum()),
        'holistic': grad_logits[:, None] * params.proj[None, :, None, None],
    }


def decode(a_h: HolisticAttention, params: HeadParams, out_h: int, out_w: int,
           skip_features: Optional[Sequence[FeatureMap]] = None) -> List[Mask]:
    """Per-frame probability masks. ``skip_features`` are accepted for interface parity and not read."""
    output, _ = decode_forward(a_h.data, params, out_h, out_w)
    return [Mask(np.clip(frame, 0.0, 1.0)) for frame in output]
