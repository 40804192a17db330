"""Region similarity (J) and boundary F-measure (F) on binarised masks."""
import csv
import logging
import math
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from episodes.container import load_tensor
from episodes.exceptions import TensorIOError
from episodes.models import Mask

from .exceptions import MetricsShapeError
from .models import EvalResult

logger = logging.getLogger(__name__)

THRESHOLD = 0.5
BOUNDARY_FRACTION = 0.008
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)

MaskLike = Union[Mask, np.ndarray]


def binarize(mask: MaskLike) -> np.ndarray:
    values = mask.values() if isinstance(mask, Mask) else np.asarray(mask, dtype=np.float64)
    return values >= THRESHOLD


def _pair(pred: MaskLike, gt: MaskLike):
    pred, gt = binarize(pred), binarize(gt)
    if pred.shape != gt.shape:
        raise MetricsShapeError(f"Prediction {pred.shape} and ground truth {gt.shape} differ")
    return pred, gt


def region_similarity(pred: MaskLike, gt: MaskLike) -> float:
    pred, gt = _pair(pred, gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def boundary_map(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a 4-neighbour in the background; outside the image is background."""
    return mask & ~ndimage.binary_erosion(mask, structure=FOUR_CONNECTED, border_value=0)


def default_tolerance(shape) -> int:
    return int(math.ceil(BOUNDARY_FRACTION * math.hypot(*shape)))


def _dilate(boundary: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return boundary
    return ndimage.binary_dilation(boundary, structure=np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool))


def contour_accuracy(pred: MaskLike, gt: MaskLike, tolerance_px: Optional[int] = None) -> float:
    pred, gt = _pair(pred, gt)
    radius = default_tolerance(pred.shape) if tolerance_px is None else int(tolerance_px)
    if radius < 0:
        raise ValueError("tolerance_px must be >= 0")
    pred_boundary, gt_boundary = boundary_map(pred), boundary_map(gt)
    n_pred, n_gt = pred_boundary.sum(), gt_boundary.sum()
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0
    precision = (pred_boundary & _dilate(gt_boundary, radius)).sum() / n_pred
    recall = (gt_boundary & _dilate(pred_boundary, radius)).sum() / n_gt
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def evaluate_episode(preds: Sequence[MaskLike], gts: Sequence[MaskLike],
                     tolerance_px: Optional[int] = None) -> EvalResult:
    if len(preds) != len(gts):
        raise MetricsShapeError(f"{len(preds)} predictions for {len(gts)} ground-truth masks")
    if not preds:
        raise MetricsShapeError("Nothing to evaluate")
    j = [region_similarity(p, g) for p, g in zip(preds, gts)]
    f = [contour_accuracy(p, g, tolerance_px) for p, g in zip(preds, gts)]
    result = EvalResult.from_frames(j, f)
    logger.info("J=%.4f F=%.4f over %d frames", result.j_mean, result.f_mean, len(j))
    return result


def write_metrics_csv(path, result: EvalResult) -> None:
    try:
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(('frame', 'j', 'f'))
            for frame, (j, f) in enumerate(zip(result.j_per_frame, result.f_per_frame)):
                writer.writerow((frame, f'{j:.9g}', f'{f:.9g}'))
    except OSError as exc:
        raise TensorIOError(path, f"write failed: {exc.strerror or exc}") from exc


def load_mask_dir(directory) -> Dict[str, Mask]:
    """Every ``*.hptn`` mask in ``directory``, keyed by file name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise TensorIOError(directory, "not a directory")
    return {path.name: load_tensor(path, kind='mask') for path in sorted(directory.glob('*.hptn'))}


def evaluate_dirs(pred_dir, gt_dir, tolerance_px: Optional[int] = None) -> EvalResult:
    """Pair predicted and ground-truth masks by file name and evaluate them in name order."""
    preds, gts = load_mask_dir(pred_dir), load_mask_dir(gt_dir)
    if set(preds) != set(gts):
        missing = sorted(set(preds) ^ set(gts))
        raise MetricsShapeError(f"Prediction and ground-truth directories differ in {', '.join(missing)}")
    names = sorted(gts)
    return evaluate_episode([preds[n] for n in names], [gts[n] for n in names], tolerance_px)
