import numpy as np

from episodes.models import FeatureMap, Mask

from .exceptions import PrototypeShapeError
from .models import ProjectionParams


def project_forward(rows: np.ndarray, weights: np.ndarray, params: ProjectionParams):
    """Per-pixel ``(W x + b) * m`` on an N x C_in matrix of pixels."""
    linear = rows @ params.weight.T + params.bias
    return linear * weights[:, None], (rows, weights, linear, params)


def project_backward(grad: np.ndarray, cache):
    rows, weights, linear, params = cache
    grad_linear = grad * weights[:, None]
    return {
        'weight': grad_linear.T @ rows,
        'bias': grad_linear.sum(axis=0),
        'rows': grad_linear @ params.weight,
        'weights': (grad * linear).sum(axis=1),
    }


def project_and_mask(features: FeatureMap, mask: Mask, params: ProjectionParams) -> FeatureMap:
    if features.spatial != mask.spatial:
        raise PrototypeShapeError(f"Mask dims {mask.spatial} differ from feature dims {features.spatial}")
    if features.channels != params.in_channels:
        raise PrototypeShapeError(
            f"Projection expects {params.in_channels} input channels, got {features.channels}"
        )
    projected, _ = project_forward(features.rows(), mask.values().ravel(), params)
    return FeatureMap.from_rows(features.level, projected, features.height, features.width)
