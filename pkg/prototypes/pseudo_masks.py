import logging
from typing import List, Sequence

import numpy as np

from episodes.models import FeatureMap, Mask

from .exceptions import EmptyForegroundError, PrototypeShapeError
from .similarity import pairwise_cosine, pairwise_cosine_backward

logger = logging.getLogger(__name__)


def _support_foreground(support_rows, support_weights):
    """Stack the mask-weighted support vectors whose weight is nonzero."""
    blocks, index = [], []
    for k, (rows, weights) in enumerate(zip(support_rows, support_weights)):
        keep = np.flatnonzero(weights)
        if keep.size == 0:
            raise EmptyForegroundError(k, f"Support mask {k} is empty at l4 resolution")
        blocks.append(rows[keep] * weights[keep, None])
        index.append(keep)
    return np.concatenate(blocks), index


def pseudo_mask_forward(query_rows: np.ndarray, support_rows, support_weights):
    """Max-cosine pseudo-masks, min-max normalised per frame.

    ``query_rows`` is T x HW x C, ``support_rows`` a list of HW x C arrays and
    ``support_weights`` the matching HW mask values. Only support pixels with
    nonzero mask weight enter the max. A frame whose max equals its min
    carries no localisation evidence and maps to all zeros.
    """
    foreground, index = _support_foreground(support_rows, support_weights)
    masks = np.zeros(query_rows.shape[:2])
    frames = []
    for t, rows in enumerate(query_rows):
        similarity, cosine_cache = pairwise_cosine(foreground, rows)
        best = similarity.argmax(axis=0)
        peak = similarity[best, np.arange(rows.shape[0])]
        low, high = peak.min(), peak.max()
        if high == low:
            logger.warning("Pseudo-mask of frame %d is degenerate (uniform similarity %.6g)", t, high)
            frames.append(None)
            continue
        masks[t] = (peak - low) / (high - low)
        frames.append((cosine_cache, best, peak.argmin(), peak.argmax(), high - low))
    cache = (query_rows.shape, support_weights, index, foreground.shape, frames, masks)
    return masks, cache


def pseudo_mask_backward(grad: np.ndarray, cache):
    """Gradients of the pseudo-masks w.r.t. query rows and each support image's rows.

    The max and min selections route gradient to the selected entries only.
    """
    query_shape, support_weights, index, foreground_shape, frames, masks = cache
    grad_query = np.zeros(query_shape)
    grad_foreground = np.zeros(foreground_shape)
    for t, frame in enumerate(frames):
        if frame is None:
            continue
        cosine_cache, best, arg_low, arg_high, spread = frame
        g = grad[t]
        grad_peak = g / spread
        grad_peak[arg_high] += -np.dot(g, masks[t]) / spread
        grad_peak[arg_low] += np.dot(g, masks[t] - 1.0) / spread
        grad_similarity = np.zeros(cosine_cache[4].shape)
        grad_similarity[best, np.arange(len(best))] = grad_peak
        grad_fg, grad_rows = pairwise_cosine_backward(grad_similarity, cosine_cache)
        grad_foreground += grad_fg
        grad_query[t] = grad_rows

    grad_support, offset = [], 0
    for weights, keep in zip(support_weights, index):
        block = np.zeros((len(weights), foreground_shape[1]))
        block[keep] = grad_foreground[offset:offset + keep.size] * weights[keep, None]
        grad_support.append(block)
        offset += keep.size
    return grad_query, grad_support


def compute_pseudo_masks(query_l4: Sequence[FeatureMap], support_l4: Sequence[FeatureMap],
                         support_masks: Sequence[Mask]) -> List[Mask]:
    if len(support_l4) != len(support_masks):
        raise PrototypeShapeError("Need exactly one mask per support feature map")
    for k, (features, mask) in enumerate(zip(support_l4, support_masks)):
        if features.spatial != mask.spatial:
            raise PrototypeShapeError(
                f"Support mask {k} is {mask.spatial}, resample it to the l4 grid {features.spatial}"
            )
    spatial = query_l4[0].spatial
    if any(f.spatial != spatial for f in query_l4):
        raise PrototypeShapeError("Query frames must share the l4 grid")

    query_rows = np.stack([f.rows() for f in query_l4])
    masks, _ = pseudo_mask_forward(
        query_rows,
        [f.rows() for f in support_l4],
        [m.values().ravel() for m in support_masks],
    )
    return [Mask(values.reshape(spatial)) for values in masks]
