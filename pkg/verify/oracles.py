"""Reference implementations written independently of the code they check.

Nothing here imports the formula under test: attention uses scipy's softmax
and explicit matrix products, graph attention and the losses loop over rows,
and k-means assignment is a plain double loop.
"""
import itertools
import logging
import math
from typing import Optional, Tuple

import numpy as np
from django.conf import settings
from scipy.special import softmax

from .exceptions import GuardExceededError
from .models import CostCounter

logger = logging.getLogger(__name__)


def _matmul(a: np.ndarray, b: np.ndarray, counter: CostCounter, bucket: str) -> np.ndarray:
    setattr(counter, bucket, getattr(counter, bucket) + a.shape[0] * a.shape[1] * b.shape[1])
    counter.bytes_touched += 8 * (a.size + b.size + a.shape[0] * b.shape[1])
    return a @ b


def full_attention_oracle(t_q, t_s, params, max_macs: Optional[int] = None) -> Tuple[np.ndarray, CostCounter]:
    """``A(T_q, T_s, T_s)`` with a full query-by-support score matrix and exact operation counts.

    Refuses when the predicted count exceeds ``max_macs`` (default
    ``settings.HPAN_FULL_ATTENTION_MAX_MACS``).
    """
    queries = np.asarray(getattr(t_q, 'tokens', t_q), dtype=np.float64)
    keys = np.asarray(getattr(t_s, 'tokens', t_s), dtype=np.float64)
    channels = queries.shape[1]
    limit = settings.HPAN_FULL_ATTENTION_MAX_MACS if max_macs is None else max_macs
    predicted = channels * channels * (len(queries) + 2 * len(keys)) \
        + 2 * len(queries) * len(keys) * channels + len(queries) * len(keys)
    if predicted > limit:
        logger.warning("Full attention refused: %.3g MACs over a guard of %.3g", predicted, limit)
        raise GuardExceededError(predicted, limit)

    counter = CostCounter()
    with counter.timed():
        q = _matmul(queries, params.w_q.T, counter, 'linear_macs')
        k = _matmul(keys, params.w_k.T, counter, 'linear_macs')
        v = _matmul(keys, params.w_v.T, counter, 'linear_macs')
        scores = _matmul(q, k.T, counter, 'attention_macs') / math.sqrt(channels)
        weights = softmax(scores, axis=1)
        counter.attention_macs += weights.size
        output = q + _matmul(weights, v, counter, 'attention_macs')
    return output, counter


def dense_attention(queries, keys, values, params) -> np.ndarray:
    """Row-by-row evaluation with scalar exponentials."""
    channels = params.w_q.shape[0]
    out = []
    for q in queries:
        qp = params.w_q @ q
        scores = [float(qp @ (params.w_k @ k)) / math.sqrt(channels) for k in keys]
        top = max(scores)
        exps = [math.exp(s - top) for s in scores]
        total = sum(exps)
        mixed = sum(e / total * (params.w_v @ v) for e, v in zip(exps, values))
        out.append(qp + mixed)
    return np.array(out)


def _cosine(a, b) -> float:
    return float(np.dot(a, b) / (math.sqrt(np.dot(a, a)) * math.sqrt(np.dot(b, b)) + 1e-8))


def dense_graph_attention(target, source, lam, w_k, w_q, w_v) -> np.ndarray:
    """Loop-by-loop evaluation of the graph attention formula."""
    keys = [w_k @ p for p in source]
    queries = [w_q @ p for p in target]
    values = [w_v @ p for p in source]
    out = []
    for q in queries:
        acc = np.zeros_like(q)
        for i, k in enumerate(keys):
            den = sum(_cosine(k, other) for other in queries) + 1e-8
            acc += _cosine(k, q) / den * values[i]
        out.append(q + lam * acc)
    return np.array(out)


def dense_ce(pred, gt, clamp: float = 1e-7) -> float:
    total = 0.0
    for p, y in zip(np.ravel(pred), np.ravel(gt)):
        p = min(max(float(p), clamp), 1.0 - clamp)
        total -= y * math.log(p) + (1.0 - y) * math.log(1.0 - p)
    return total / np.size(pred)


def dense_iou(pred, gt) -> float:
    scores = []
    for p, y in zip(pred, gt):
        p, y = np.ravel(p), np.ravel(y)
        intersection = sum(a * b for a, b in zip(p, y))
        union = sum(a + b - a * b for a, b in zip(p, y))
        scores.append(1.0 if union == 0 else intersection / union)
    return 1.0 - sum(scores) / len(scores)


def dense_proto(prototypes, lambda_proto: float = 1.0) -> float:
    n = len(prototypes)
    pairs = [_cosine(prototypes[i], prototypes[j]) for i in range(n) for j in range(n) if i != j]
    return lambda_proto * sum(pairs) / len(pairs)


def kmeans_oracle(points, centroids) -> Tuple[float, np.ndarray]:
    """Nearest-centroid assignment and summed squared distance; ties go to the lowest index."""
    points = np.asarray(points, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    assignment = np.zeros(len(points), dtype=np.int64)
    objective = 0.0
    for m, point in enumerate(points):
        best, best_distance = 0, None
        for j, centroid in enumerate(centroids):
            distance = sum((a - b) ** 2 for a, b in zip(point, centroid))
            if best_distance is None or distance < best_distance:
                best, best_distance = j, distance
        assignment[m] = best
        objective += best_distance
    return float(objective), assignment


def pair_seeded_objective(points, max_iterations: int = 100) -> float:
    """Best Lloyd objective for k=2 over every seeding by a pair of distinct points."""
    points = np.asarray(points, dtype=np.float64)
    best = math.inf
    for i, j in itertools.combinations(range(len(points)), 2):
        centroids = points[[i, j]].copy()
        objective, assignment = kmeans_oracle(points, centroids)
        for _ in range(max_iterations):
            for c in range(2):
                members = points[assignment == c]
                if len(members):
                    centroids[c] = members.mean(axis=0)
            objective, updated = kmeans_oracle(points, centroids)
            if np.array_equal(updated, assignment):
                break
            assignment = updated
        best = min(best, objective)
    return best


def naive_boundary(mask) -> list:
    """Foreground pixels with a 4-neighbour that is background or off the image."""
    mask = np.asarray(mask, dtype=bool)
    height, width = mask.shape
    points = []
    for y in range(height):
        for x in range(width):
            if not mask[y, x]:
                continue
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ny, nx = y + dy, x + dx
                if not (0 <= ny < height and 0 <= nx < width) or not mask[ny, nx]:
                    points.append((y, x))
                    break
    return points


def naive_boundary_f(pred, gt, tolerance: int) -> float:
    """Boundary F-measure by pairwise Chebyshev distances between boundary pixels."""
    pred_points = naive_boundary(np.asarray(pred) >= 0.5)
    gt_points = naive_boundary(np.asarray(gt) >= 0.5)
    if not pred_points and not gt_points:
        return 1.0
    if not pred_points or not gt_points:
        return 0.0

    def matched(sources, targets):
        hits = sum(1 for sy, sx in sources
                   if any(max(abs(sy - ty), abs(sx - tx)) <= tolerance for ty, tx in targets))
        return hits / len(sources)

    precision, recall = matched(pred_points, gt_points), matched(gt_points, pred_points)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)
