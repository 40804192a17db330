import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from episodes.models import FeatureMap, Mask

from .exceptions import ClusteringError, EmptyForegroundError, PrototypeShapeError
from .models import PrototypeSet

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 50
DEFAULT_RESTARTS = 10
TAU_FG = 0.5
QUERY_STREAM = 2 ** 32


@dataclass(frozen=True, eq=False)
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: float
    history: Tuple[float, ...]
    iterations: int
    converged: bool
    duplicated: bool


def _seed_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    first = rng.integers(len(points))
    chosen = [first]
    closest = cdist(points, points[first:first + 1], 'sqeuclidean')[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            pick = rng.choice(len(points), p=closest / total)
        else:
            pick = rng.integers(len(points))
        chosen.append(pick)
        closest = np.minimum(closest, cdist(points, points[pick:pick + 1], 'sqeuclidean')[:, 0])
    return points[chosen].copy()


def _assign(points, centroids):
    distances = cdist(points, centroids, 'sqeuclidean')
    labels = distances.argmin(axis=1)
    return labels, float(distances[np.arange(len(points)), labels].sum())


def _lloyd(points: np.ndarray, centroids: np.ndarray):
    history = []
    labels = None
    converged = False
    for iteration in range(1, MAX_ITERATIONS + 1):
        new_labels, objective = _assign(points, centroids)
        if history and objective > history[-1] + 1e-9 * max(1.0, abs(history[-1])):
            raise ClusteringError(
                f"k-means objective rose from {history[-1]:.12g} to {objective:.12g} at iteration {iteration}"
            )
        history.append(objective)
        if labels is not None and np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
        for j in range(len(centroids)):
            members = points[labels == j]
            # An emptied cluster keeps its previous centroid.
            if len(members):
                centroids[j] = members.mean(axis=0)
    if not converged:
        logger.debug("k-means stopped after %d iterations without reaching a fixpoint", MAX_ITERATIONS)
        labels, objective = _assign(points, centroids)
        history.append(objective)
    return centroids, labels, tuple(history), iteration, converged


def kmeans(points: np.ndarray, k: int, seed, n_init: int = DEFAULT_RESTARTS) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding and squared-Euclidean distance.

    Runs ``n_init`` seedings from one generator seeded with ``seed`` and keeps
    the lowest objective. With fewer points than clusters every point becomes
    a centroid and the surplus centroids repeat points; ``duplicated`` flags
    any repeated centroid.
    """
    points = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise ClusteringError(f"k must be positive, got {k}")
    if points.ndim != 2 or len(points) == 0:
        raise ClusteringError("k-means needs a non-empty M x C matrix of points")

    if len(points) < k:
        centroids = points[np.arange(k) % len(points)].copy()
        labels = np.arange(len(points))
        logger.debug("k-means: %d points for k=%d, duplicating centroids", len(points), k)
        return KMeansResult(centroids, labels, 0.0, (0.0,), 0, True, True)

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        run = _lloyd(points, _seed_plus_plus(points, k, rng))
        if best is None or run[2][-1] < best[2][-1]:
            best = run
    centroids, labels, history, iterations, converged = best
    duplicated = len(np.unique(centroids, axis=0)) < k
    if duplicated:
        logger.debug("k-means returned duplicated centroids (k=%d, M=%d)", k, len(points))
    return KMeansResult(centroids, labels, history[-1], history, iterations, converged, duplicated)


def cluster_support_rows(rows: Sequence[np.ndarray], weights: Sequence[np.ndarray], n_per_image: int,
                         seed: int, n_init: int = DEFAULT_RESTARTS) -> PrototypeSet:
    blocks, duplicated = [], False
    for k, (image_rows, image_weights) in enumerate(zip(rows, weights)):
        foreground = image_rows[np.asarray(image_weights) != 0]
        if len(foreground) == 0:
            raise EmptyForegroundError(k, f"Support image {k} has no foreground pixel to cluster")
        result = kmeans(foreground, n_per_image, seed=[seed, k], n_init=n_init)
        blocks.append(result.centroids)
        duplicated |= result.duplicated
    return PrototypeSet(np.concatenate(blocks), origin='support_raw', n_per_unit=n_per_image,
                        duplicated=duplicated)


def cluster_query_rows(rows: Sequence[np.ndarray], weights: Sequence[np.ndarray], n_per_frame: int,
                       seed: int, tau_fg: float = TAU_FG, n_init: int = DEFAULT_RESTARTS,
                       n_clusters: Optional[int] = None) -> PrototypeSet:
    """One k-means over the pooled foreground of all frames.

    A pixel counts as foreground when its pseudo-mask weight is at or above
    ``tau_fg``; its row is expected to be already scaled by that weight.
    """
    pooled = np.concatenate([frame_rows[np.asarray(frame_weights) >= tau_fg]
                             for frame_rows, frame_weights in zip(rows, weights)])
    if len(pooled) == 0:
        raise EmptyForegroundError(None, f"No query pixel reaches the foreground threshold {tau_fg}")
    k = n_clusters if n_clusters is not None else n_per_frame * len(rows)
    result = kmeans(pooled, k, seed=[seed, QUERY_STREAM], n_init=n_init)
    return PrototypeSet(result.centroids, origin='query_raw', n_per_unit=n_per_frame,
                        duplicated=result.duplicated)


def _masked_rows(fg_feats: Sequence[FeatureMap], masks: Optional[Sequence[Mask]]):
    rows = [f.rows() for f in fg_feats]
    if masks is None:
        return rows, [np.abs(r).sum(axis=1) for r in rows]
    if len(masks) != len(fg_feats):
        raise PrototypeShapeError("Need one mask per feature map")
    for f, m in zip(fg_feats, masks):
        if f.spatial != m.spatial:
            raise PrototypeShapeError(f"Mask dims {m.spatial} differ from feature dims {f.spatial}")
    return rows, [m.values().ravel() for m in masks]


def cluster_support_prototypes(fg_feats: Sequence[FeatureMap], n_per_image: int, seed: int,
                               masks: Optional[Sequence[Mask]] = None,
                               n_init: int = DEFAULT_RESTARTS) -> PrototypeSet:
    """N_p prototypes per support image from its foreground pixels.

    Without ``masks`` a pixel is foreground when its masked feature vector
    is nonzero.
    """
    rows, weights = _masked_rows(fg_feats, masks)
    return cluster_support_rows(rows, weights, n_per_image, seed, n_init=n_init)


def cluster_query_prototypes(fg_feats: Sequence[FeatureMap], n_per_frame: int, seed: int,
                             masks: Sequence[Mask], tau_fg: float = TAU_FG,
                             n_init: int = DEFAULT_RESTARTS) -> PrototypeSet:
    rows, weights = _masked_rows(fg_feats, masks)
    return cluster_query_rows(rows, weights, n_per_frame, seed, tau_fg=tau_fg, n_init=n_init)
