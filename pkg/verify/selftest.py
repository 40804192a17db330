"""Oracle-based acceptance checks, runnable without the test runner."""
import logging
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from attention.blocks import attention, prototype_co_attention
from attention.models import AttentionBlockParams, TokenMatrix
from metrics.evaluation import contour_accuracy
from prototypes.clustering import kmeans
from prototypes.graph_attention import graph_attention_forward
from prototypes.models import GraphAttentionParams, PrototypeSet
from prototypes.pseudo_masks import pseudo_mask_forward
from segmentation.losses import ce_forward, iou_forward, proto_forward

from .costs import cost_model
from .exceptions import GradientCheckError, GuardExceededError
from .gradcheck import run_gradcheck
from .models import CostCounter
from .oracles import (
    dense_attention,
    dense_ce,
    dense_graph_attention,
    dense_iou,
    dense_proto,
    full_attention_oracle,
    kmeans_oracle,
    naive_boundary_f,
    pair_seeded_objective,
)

logger = logging.getLogger(__name__)

FORMULA_RTOL = 1e-6
FORMULA_ATOL = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _close(actual, expected) -> Tuple[bool, float]:
    actual, expected = np.asarray(actual), np.asarray(expected)
    return bool(np.allclose(actual, expected, rtol=FORMULA_RTOL, atol=FORMULA_ATOL)), \
        float(np.abs(actual - expected).max(initial=0.0))


def check_attention(seeds: int = 100) -> Tuple[bool, str]:
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        channels = int(rng.integers(1, 6))
        q = rng.standard_normal((int(rng.integers(1, 6)), channels))
        kv = rng.standard_normal((int(rng.integers(1, 6)), channels))
        params = AttentionBlockParams.initialize(channels, rng)
        ok, error = _close(attention(q, kv, kv, params), dense_attention(q, kv, kv, params))
        worst = max(worst, error)
        if not ok:
            return False, f"seed {seed}: max abs error {error:.3g}"
    return True, f"{seeds} instances, max abs error {worst:.3g}"


def check_graph_attention(seeds: int = 100) -> Tuple[bool, str]:
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        channels = int(rng.integers(2, 6))
        target = rng.standard_normal((int(rng.integers(1, 6)), channels))
        source = rng.standard_normal((int(rng.integers(1, 6)), channels))
        params = GraphAttentionParams.initialize(channels, rng)
        lam = float(rng.uniform(0.0, 1.0))
        out, _ = graph_attention_forward(target, source, lam, params)
        ok, error = _close(out, dense_graph_attention(target, source, lam, params.w_k, params.w_q, params.w_v))
        worst = max(worst, error)
        if not ok:
            return False, f"seed {seed}: max abs error {error:.3g}"
    return True, f"{seeds} instances, max abs error {worst:.3g}"


def check_losses(seeds: int = 100) -> Tuple[bool, str]:
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        pred = rng.uniform(size=(2, 3, 4))
        gt = (rng.uniform(size=(2, 3, 4)) > 0.5).astype(np.float64)
        prototypes = rng.standard_normal((int(rng.integers(2, 6)), 3))
        lam = float(rng.uniform(0.0, 2.0))
        for name, actual, expected in (('ce', ce_forward(pred, gt)[0], dense_ce(pred, gt)),
                                       ('iou', iou_forward(pred, gt)[0], dense_iou(pred, gt)),
                                       ('proto', proto_forward(prototypes, lam)[0], dense_proto(prototypes, lam))):
            ok, error = _close(actual, expected)
            if not ok:
                return False, f"{name} seed {seed}: abs error {error:.3g}"
    return True, f"{seeds} instances of each loss"


def check_full_attention() -> Tuple[bool, str]:
    rng = np.random.default_rng(0)
    q, kv = rng.standard_normal((6, 4)), rng.standard_normal((5, 4))
    params = AttentionBlockParams.initialize(4, rng)
    output, counter = full_attention_oracle(q, kv, params)
    ok, error = _close(output, attention(q, kv, kv, params))
    if not ok:
        return False, f"disagrees with attention by {error:.3g}"
    expected = CostCounter()
    expected.add_attention_block(6, 5, 4)
    if counter.mac_count != expected.mac_count:
        return False, f"counted {counter.mac_count} MACs, expected {expected.mac_count}"
    huge = np.zeros((40 * 448, 256))
    try:
        full_attention_oracle(huge, huge, AttentionBlockParams.identity(256))
    except GuardExceededError as exc:
        return True, f"agrees with attention; guard refuses K=T=40 ({exc.reduction:.1f}x over)"
    return False, "guard did not trigger at K=T=40"


def check_pseudo_masks(episodes: int = 1000) -> Tuple[bool, str]:
    for seed in range(episodes):
        rng = np.random.default_rng(seed)
        channels = int(rng.integers(2, 6))
        support = [rng.standard_normal((6, channels)) for _ in range(2)]
        weights = [(rng.uniform(size=6) > 0.4).astype(np.float64) for _ in range(2)]
        for w in weights:
            w[rng.integers(6)] = 1.0
        query = rng.standard_normal((3, 7, channels))
        masks, _ = pseudo_mask_forward(query, support, weights)
        if masks.min() < 0.0 or masks.max() > 1.0:
            return False, f"seed {seed}: values outside [0, 1]"
        for frame in masks:
            if frame.max() > 0 and (frame.min(), frame.max()) != (0.0, 1.0):
                return False, f"seed {seed}: non-degenerate frame misses 0 or 1"
        scaled = [rows * rng.uniform(0.5, 3.0, size=(6, 1)) for rows in support]
        if np.abs(pseudo_mask_forward(query, scaled, weights)[0] - masks).max() > 1e-6:
            return False, f"seed {seed}: not invariant to positive rescaling"
    return True, f"{episodes} random episodes"


def check_kmeans(seeds: int = 100) -> Tuple[bool, str]:
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        points = rng.standard_normal((int(rng.integers(2, 9)), 2))
        result = kmeans(points, 2, seed)
        objective, _ = kmeans_oracle(points, result.centroids)
        if abs(objective - result.objective) > 1e-9:
            return False, f"seed {seed}: reported objective {result.objective:.12g}, oracle {objective:.12g}"
        best = pair_seeded_objective(points)
        if result.objective > best + 1e-9:
            return False, f"seed {seed}: objective {result.objective:.12g} above pair-seeded {best:.12g}"
        if any(b > a + 1e-9 for a, b in zip(result.history, result.history[1:])):
            return False, f"seed {seed}: Lloyd objective increased"
    return True, f"{seeds} point sets"


def check_cost_model() -> Tuple[bool, str]:
    k, t, height, width, n_p, channels = 5, 5, 16, 28, 5, 256
    rng = np.random.default_rng(0)
    t_q = TokenMatrix(rng.standard_normal((t * height * width, channels)), 'query', (t, height, width))
    t_s = TokenMatrix(rng.standard_normal((k * height * width, channels)), 'support', (k, height, width))
    p_h = PrototypeSet(rng.standard_normal((n_p * k, channels)), 'holistic', n_p)
    blocks = (AttentionBlockParams.initialize(channels, rng), AttentionBlockParams.initialize(channels, rng))
    counter = CostCounter()
    prototype_co_attention(t_q, t_s, p_h, blocks, counter)
    predicted = cost_model(k, t, height, width, n_p, channels)
    if (counter.linear_macs, counter.attention_macs) != (predicted.factored_linear, predicted.factored_attention):
        return False, f"counted {counter.mac_count} MACs, predicted {predicted.factored}"
    if predicted.attention_ratio < 10:
        return False, f"factored attention only {predicted.attention_ratio:.1f}x cheaper"
    return True, f"counters match; factored attention {predicted.attention_ratio:.1f}x cheaper at defaults"


def check_metrics(masks: int = 50) -> Tuple[bool, str]:
    for seed in range(masks):
        rng = np.random.default_rng(seed)
        height, width = rng.integers(4, 33, size=2)
        pred = rng.random((height, width)) > rng.uniform(0.2, 0.8)
        gt = rng.random((height, width)) > rng.uniform(0.2, 0.8)
        actual, expected = contour_accuracy(pred, gt, 0), naive_boundary_f(pred, gt, 0)
        if abs(actual - expected) > 1e-12:
            return False, f"seed {seed}: F={actual:.12g}, boundary oracle {expected:.12g}"
    return True, f"{masks} random masks match the boundary oracle"


def check_gradients() -> Tuple[bool, str]:
    try:
        report = run_gradcheck()
    except GradientCheckError as exc:
        return False, str(exc)
    return True, f"{len(report)} groups, worst {max(report.values()):.3g}"


CHECKS: Tuple[Tuple[str, Callable[[], Tuple[bool, str]]], ...] = (
    ('attention', check_attention),
    ('graph_attention', check_graph_attention),
    ('losses', check_losses),
    ('full_attention', check_full_attention),
    ('pseudo_masks', check_pseudo_masks),
    ('kmeans', check_kmeans),
    ('cost_model', check_cost_model),
    ('metrics', check_metrics),
    ('gradients', check_gradients),
)


def run_selftest() -> List[CheckResult]:
    results = []
    for name, check in CHECKS:
        passed, detail = check()
        (logger.info if passed else logger.error)("Selftest %s: %s", name, detail)
        results.append(CheckResult(name, passed, detail))
    return results
