import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import numpy as np

from episodes.exceptions import ConfigError
from episodes.models import Episode

from .exceptions import NonFiniteLossError
from .models import LossReport, LossWeights, write_trajectory
from .network import ModelParams, NetworkOptions, network_backward, network_forward, prepare_inputs

logger = logging.getLogger(__name__)

DEFAULT_LR = 2e-3
MIN_LOSS_REDUCTION = 0.5


def clip_gradients(grads, max_norm: float):
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {key: g * scale for key, g in grads.items()}, norm


def _mean_report(reports: Sequence[LossReport]) -> LossReport:
    def mean(name):
        return float(np.mean([getattr(r, name) for r in reports]))
    return LossReport(ce=mean('ce'), iou=mean('iou'), proto=mean('proto'), total=mean('total'),
                      mean_cosine=mean('mean_cosine'))


def train_demo(episodes: Sequence[Episode], steps: int, lr: float = DEFAULT_LR, seed: int = 0,
               options: NetworkOptions = NetworkOptions(), weights: LossWeights = LossWeights(),
               channels: Optional[int] = None, max_grad_norm: Optional[float] = None,
               jobs: int = 1, trajectory_path=None) -> List[LossReport]:
    """Plain gradient descent over every parameter, one step per pass over ``episodes``.

    Returns the loss report of each step, measured before that step's
    update. Per-episode passes may run on ``jobs`` threads; gradients are
    summed in episode order.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    if lr < 0:
        raise ConfigError("lr must be >= 0")
    if not episodes:
        raise ConfigError("Training needs at least one episode")
    inputs = [prepare_inputs(episode, seed=seed) for episode in episodes]
    if any(item.gt is None for item in inputs):
        raise ConfigError("Training episodes need ground-truth query masks")

    in_channels = inputs[0].in_channels
    params = ModelParams.initialize(in_channels, channels or in_channels, np.random.default_rng(seed),
                                    options.lambda_self, options.lambda_co)

    def evaluate(item, current):
        result = network_forward(item, current, options, weights)
        return result.report, network_backward(result, current)

    reports = []
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for step in range(steps):
            outcomes = list(pool.map(lambda item, current=params: evaluate(item, current), inputs))
            report = _mean_report([outcome[0] for outcome in outcomes])
            if not report.is_finite:
                raise NonFiniteLossError(step, report)
            grads = {key: sum(outcome[1][key] for outcome in outcomes) / len(outcomes)
                     for key in outcomes[0][1]}
            if max_grad_norm is not None:
                grads, norm = clip_gradients(grads, max_grad_norm)
                logger.debug("Step %d gradient norm %.6g", step, norm)
            reports.append(report)
            log = logger.info if step % 10 == 0 else logger.debug
            log("Step %d: ce=%.6f iou=%.6f proto=%.6f total=%.6f", step,
                report.ce, report.iou, report.proto, report.total)
            params = params.updated(grads, lr)

    if trajectory_path is not None:
        write_trajectory(trajectory_path, reports)
    return reports


def loss_reduction(reports: Sequence[LossReport]) -> float:
    """Fraction by which the total loss fell from the first step to the last."""
    first, last = reports[0].total, reports[-1].total
    return 1.0 - last / first if first else 0.0
