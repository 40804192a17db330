from typing import Sequence

import numpy as np

from episodes.models import Mask
from prototypes.models import PrototypeSet
from prototypes.similarity import pairwise_cosine, pairwise_cosine_backward

from .exceptions import LossDomainError, LossShapeError
from .models import LossReport, LossWeights

CLAMP = 1e-7


def _check(pred: np.ndarray, gt: np.ndarray):
    if pred.shape != gt.shape:
        raise LossShapeError(f"Prediction {pred.shape} and ground truth {gt.shape} differ")


def ce_forward(pred: np.ndarray, gt: np.ndarray):
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    _check(pred, gt)
    clamped = np.clip(pred, CLAMP, 1.0 - CLAMP)
    loss = -np.mean(gt * np.log(clamped) + (1.0 - gt) * np.log(1.0 - clamped))
    return float(loss), (pred, gt, clamped)


def ce_backward(cache) -> np.ndarray:
    pred, gt, clamped = cache
    grad = -(gt / clamped - (1.0 - gt) / (1.0 - clamped)) / pred.size
    inside = (pred >= CLAMP) & (pred <= 1.0 - CLAMP)
    return np.where(inside, grad, 0.0)


def iou_forward(pred: np.ndarray, gt: np.ndarray):
    """``1 - mean_t sum(y p) / sum(y + p - y p)`` over the leading frame axis; an empty union scores 1."""
    _check(pred, gt)
    frames = pred.shape[0]
    axes = tuple(range(1, pred.ndim))
    intersection = (gt * pred).sum(axis=axes)
    union = (gt + pred - gt * pred).sum(axis=axes)
    scores = np.divide(intersection, union, out=np.ones(frames), where=union > 0)
    return float(1.0 - scores.mean()), (pred, gt, intersection, union)


def iou_backward(cache) -> np.ndarray:
    pred, gt, intersection, union = cache
    frames = pred.shape[0]
    shape = (frames,) + (1,) * (pred.ndim - 1)
    i, u = intersection.reshape(shape), union.reshape(shape)
    safe = np.where(u > 0, u, 1.0)
    grad = -(gt * u - i * (1.0 - gt)) / (safe ** 2) / frames
    return np.where(u > 0, grad, 0.0)


def proto_forward(prototypes: np.ndarray, lambda_proto: float = 1.0):
    """Mean cosine similarity over ordered pairs of distinct prototypes, times ``lambda_proto``."""
    n = prototypes.shape[0]
    if n < 2:
        raise LossDomainError(f"The prototype loss needs at least 2 prototypes, got {n}")
    similarity, cosine_cache = pairwise_cosine(prototypes, prototypes)
    off_diagonal = similarity.sum() - np.trace(similarity)
    return float(lambda_proto * off_diagonal / (n * (n - 1))), (n, lambda_proto, cosine_cache)


def proto_backward(cache) -> np.ndarray:
    n, lambda_proto, cosine_cache = cache
    grad_similarity = lambda_proto / (n * (n - 1)) * (1.0 - np.eye(n))
    grad_a, grad_b = pairwise_cosine_backward(grad_similarity, cosine_cache)
    return grad_a + grad_b


def _stack(masks: Sequence[Mask]) -> np.ndarray:
    return np.stack([m.values() for m in masks])


def ce_loss(pred: Sequence[Mask], gt: Sequence[Mask]) -> float:
    if len(pred) != len(gt):
        raise LossShapeError(f"{len(pred)} predictions for {len(gt)} ground-truth masks")
    return ce_forward(_stack(pred), _stack(gt))[0]


def iou_loss(pred: Sequence[Mask], gt: Sequence[Mask]) -> float:
    if len(pred) != len(gt):
        raise LossShapeError(f"{len(pred)} predictions for {len(gt)} ground-truth masks")
    return iou_forward(_stack(pred), _stack(gt))[0]


def proto_loss(p_h: PrototypeSet, lambda_proto: float = 1.0) -> float:
    return proto_forward(p_h.prototypes, lambda_proto)[0]


def total_loss(ce: float, iou: float, proto: float, weights: LossWeights = LossWeights()) -> LossReport:
    total = weights.lambda_ce * ce + weights.lambda_iou * iou + weights.lambda_proto * proto
    return LossReport(ce=ce, iou=iou, proto=proto, total=total)
