"""End-to-end inference over one or more episodes, writing every artefact under the output directory."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from episodes.container import write_tensor
from episodes.models import Episode, Mask
from episodes.resampling import resample_mask
from episodes.storage import load_episode
from episodes.synthesis import synth_episode
from metrics.evaluation import evaluate_episode, write_metrics_csv
from metrics.models import EvalResult
from prototypes.storage import save_prototypes
from segmentation.models import LossReport
from segmentation.network import ModelParams, network_forward, prepare_inputs

from .models import RunConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RunResult:
    name: str
    output_dir: Path
    masks: Tuple[Mask, ...]
    pseudo_masks: Tuple[Mask, ...]
    evaluation: Optional[EvalResult]
    pseudo_evaluation: Optional[EvalResult]
    report: Optional[LossReport]


def _write_masks(directory: Path, masks: Sequence[Mask]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for index, mask in enumerate(masks):
        write_tensor(directory / f'frame_{index:03d}.hptn', mask)


def run_episode(cfg: RunConfig, episode: Episode, output_dir) -> RunResult:
    """Run the network with freshly initialised parameters seeded by ``cfg.seed``.

    Writes ``masks/``, ``pseudo_masks/`` and ``prototypes/``, plus
    ``metrics.csv`` and ``pseudo_metrics.csv`` when the episode carries
    query ground truth.
    """
    output_dir = Path(output_dir)
    inputs = prepare_inputs(episode, seed=cfg.seed)
    params = ModelParams.initialize(episode.channels, cfg.channels, np.random.default_rng(cfg.seed),
                                    cfg.lambda_self, cfg.lambda_co)
    result = network_forward(inputs, params, cfg.network_options(), cfg.loss_weights())

    masks = tuple(Mask(np.clip(frame, 0.0, 1.0)) for frame in result.probabilities)
    pseudo_masks = tuple(Mask(frame) for frame in inputs.pseudo_masks)
    _write_masks(output_dir / 'masks', masks)
    _write_masks(output_dir / 'pseudo_masks', pseudo_masks)
    save_prototypes(result.prototypes.values(), output_dir / 'prototypes')

    evaluation = pseudo_evaluation = None
    if episode.has_query_masks:
        gts = [item.mask for item in episode.query]
        evaluation = evaluate_episode(masks, gts)
        l4_h, l4_w = episode.l4_shape
        pseudo_evaluation = evaluate_episode(pseudo_masks, [resample_mask(gt, l4_h, l4_w) for gt in gts])
        write_metrics_csv(output_dir / 'metrics.csv', evaluation)
        write_metrics_csv(output_dir / 'pseudo_metrics.csv', pseudo_evaluation)
    if result.report is not None:
        logger.info("Episode %s: total loss %.6f", output_dir.name, result.report.total)
    return RunResult(output_dir.name, output_dir, masks, pseudo_masks, evaluation, pseudo_evaluation, result.report)


def episode_sources(cfg: RunConfig) -> List[Tuple[str, object]]:
    """``(name, source)`` pairs: an episode directory, or synthetic seeds ``seed .. seed + n_episodes - 1``."""
    if cfg.episode_dir is not None:
        return [(cfg.episode_dir.name, cfg.episode_dir)]
    return [(f'synth_{cfg.seed + offset}', cfg.seed + offset) for offset in range(cfg.n_episodes)]


def _load(cfg: RunConfig, source) -> Episode:
    if isinstance(source, Path):
        return load_episode(source)
    return synth_episode(cfg.synth_config(), source)


def run_episodes(cfg: RunConfig, jobs: int = 1) -> List[RunResult]:
    """Every episode of ``cfg`` into ``cfg.output_dir/<name>``; results keep source order for any ``jobs``."""
    sources = episode_sources(cfg)

    def run(item):
        name, source = item
        return run_episode(cfg, _load(cfg, source), cfg.output_dir / name)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(run, sources))
