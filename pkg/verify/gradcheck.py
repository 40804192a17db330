"""Finite-difference check of every analytic gradient in the pipeline.

Network parameters are checked end to end on a small synthetic episode with
the cluster centroids frozen, since k-means assignment is piecewise constant
and carries no gradient. The losses, pseudo-masks and cosine similarity are
checked on their own inputs.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, Optional

import numpy as np

from episodes.models import SynthConfig
from episodes.synthesis import synth_episode
from prototypes.pseudo_masks import pseudo_mask_backward, pseudo_mask_forward
from prototypes.similarity import pairwise_cosine, pairwise_cosine_backward
from segmentation.losses import ce_backward, ce_forward, iou_backward, iou_forward, proto_backward, proto_forward
from segmentation.models import LossReport
from segmentation.network import ModelParams, NetworkOptions, network_backward, network_forward, prepare_inputs

from .exceptions import GradientCheckError
from .gradients import STEP, TOLERANCE, finite_diff_grad, relative_error

logger = logging.getLogger(__name__)

GRADCHECK_CONFIG = SynthConfig(k_shots=2, t_frames=2, channels=6, l3_height=6, l3_width=8,
                               image_height=12, image_width=16, blob_radius=5, n_distractors=3)
GRADCHECK_OPTIONS = NetworkOptions(n_prototypes=2, kmeans_restarts=1)
NETWORK_GROUPS = (
    'projection',
    'graph.support_self', 'graph.query_self', 'graph.co',
    'attention.co_inner', 'attention.co_outer', 'attention.self_inner', 'attention.self_outer',
    'head',
)
STANDALONE_GROUPS = ('ce', 'iou', 'proto', 'pseudo_mask', 'cosine')
GROUPS = NETWORK_GROUPS + STANDALONE_GROUPS
EXCLUDED = ('kmeans',)

Perturb = Callable[[str, np.ndarray], np.ndarray]


def group_of(key: str) -> str:
    """``graph.co.w_k`` -> ``graph.co``; ``projection.weight`` -> ``projection``."""
    parts = key.split('.')
    return parts[0] if parts[0] in ('projection', 'head') else '.'.join(parts[:2])


def _apply(perturb: Optional[Perturb], key: str, grad: np.ndarray) -> np.ndarray:
    return grad if perturb is None else perturb(key, grad)


def _check_point(seed: int):
    """Seeded episode inputs, parameters and the centroids held fixed while differencing."""
    cfg, options = GRADCHECK_CONFIG, GRADCHECK_OPTIONS
    inputs = prepare_inputs(synth_episode(cfg, seed))
    params = ModelParams.initialize(cfg.channels, cfg.channels, np.random.default_rng(seed))
    clustered = network_forward(inputs, params, options).prototypes
    frozen = {name: clustered[name] for name in ('support_raw', 'query_raw')}
    return inputs, params, frozen


def _network_errors(seed: int, step: float, perturb: Optional[Perturb]) -> Dict[str, float]:
    options = GRADCHECK_OPTIONS
    inputs, params, frozen = _check_point(seed)
    analytic = network_backward(network_forward(inputs, params, options, frozen_prototypes=frozen), params)

    flat = params.to_dict()
    errors: Dict[str, float] = {}
    for key, value in flat.items():
        def loss(x, key=key):
            changed = ModelParams.from_dict(dict(flat, **{key: x}), options.lambda_self, options.lambda_co)
            return network_forward(inputs, changed, options, frozen_prototypes=frozen).report.total

        error = relative_error(_apply(perturb, key, analytic[key]), finite_diff_grad(loss, value, step))
        group = group_of(key)
        errors[group] = max(errors.get(group, 0.0), error)
    return errors


def _standalone_errors(seed: int, step: float, perturb: Optional[Perturb]) -> Dict[str, float]:
    rng = np.random.default_rng(seed)
    errors = {}

    pred = rng.uniform(0.05, 0.95, size=(2, 3, 4))
    gt = (rng.uniform(size=(2, 3, 4)) > 0.5).astype(np.float64)
    for name, forward, backward in (('ce', ce_forward, ce_backward), ('iou', iou_forward, iou_backward)):
        analytic = _apply(perturb, name, backward(forward(pred, gt)[1]))
        errors[name] = relative_error(analytic, finite_diff_grad(lambda x: forward(x, gt)[0], pred, step))

    prototypes = rng.standard_normal((5, 4))
    analytic = _apply(perturb, 'proto', proto_backward(proto_forward(prototypes, 1.0)[1]))
    errors['proto'] = relative_error(analytic, finite_diff_grad(lambda x: proto_forward(x, 1.0)[0], prototypes, step))

    support = [rng.standard_normal((4, 3)), rng.standard_normal((4, 3))]
    weights = [np.array([1.0, 0.0, 1.0, 1.0]), np.array([0.0, 1.0, 1.0, 0.0])]
    query = rng.standard_normal((2, 5, 3))
    g = rng.standard_normal((2, 5))
    grad_query, grad_support = pseudo_mask_backward(g, pseudo_mask_forward(query, support, weights)[1])
    numeric_query = finite_diff_grad(lambda x: np.sum(pseudo_mask_forward(x, support, weights)[0] * g), query, step)
    numeric_support = finite_diff_grad(
        lambda x: np.sum(pseudo_mask_forward(query, [x, support[1]], weights)[0] * g), support[0], step)
    errors['pseudo_mask'] = max(
        relative_error(_apply(perturb, 'pseudo_mask', grad_query), numeric_query),
        relative_error(_apply(perturb, 'pseudo_mask', grad_support[0]), numeric_support),
    )

    a, b = rng.standard_normal((3, 4)), rng.standard_normal((5, 4))
    g = rng.standard_normal((3, 5))
    grad_a, grad_b = pairwise_cosine_backward(g, pairwise_cosine(a, b)[1])
    errors['cosine'] = max(
        relative_error(_apply(perturb, 'cosine', grad_a),
                       finite_diff_grad(lambda x: np.sum(pairwise_cosine(x, b)[0] * g), a, step)),
        relative_error(_apply(perturb, 'cosine', grad_b),
                       finite_diff_grad(lambda x: np.sum(pairwise_cosine(a, x)[0] * g), b, step)),
    )
    return errors


def run_gradcheck(seed: int = 0, perturb: Optional[Perturb] = None, step: float = STEP,
                  tolerance: float = TOLERANCE, jobs: int = 1) -> Dict[str, float]:
    """Max relative error per parameter group, in :data:`GROUPS` order.

    ``perturb(key, grad)`` may replace an analytic gradient before comparison.
    With ``jobs > 1`` the network and standalone groups run on two threads.
    Raises :class:`GradientCheckError` naming every group above ``tolerance``.
    """
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            network = pool.submit(_network_errors, seed, step, perturb)
            standalone = pool.submit(_standalone_errors, seed, step, perturb)
            errors = {**network.result(), **standalone.result()}
    else:
        errors = {**_network_errors(seed, step, perturb), **_standalone_errors(seed, step, perturb)}
    report = {group: errors[group] for group in GROUPS}
    for group, error in report.items():
        if error > tolerance:
            logger.error("Gradient check %s: max relative error %.3g above %.0e", group, error, tolerance)
        else:
            logger.info("Gradient check %s: max relative error %.3g", group, error)
    failures = {group: error for group, error in report.items() if error > tolerance}
    if failures:
        raise GradientCheckError(failures, report)
    return report


def checked_loss_report(seed: int = 0, tolerance: float = TOLERANCE, jobs: int = 1) -> LossReport:
    """Loss at the gradient-check point with every group's verdict in ``grad_check``."""
    inputs, params, frozen = _check_point(seed)
    report = network_forward(inputs, params, GRADCHECK_OPTIONS, frozen_prototypes=frozen).report
    try:
        errors = run_gradcheck(seed=seed, tolerance=tolerance, jobs=jobs)
    except GradientCheckError as exc:
        errors = exc.report
    return report.with_grad_check(errors, tolerance)
