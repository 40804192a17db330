import logging

import numpy as np

from .exceptions import ConfigError
from .models import Episode, FeatureMap, FeatureStack, Mask, QueryItem, SupportItem, SynthConfig
from .resampling import resample_grid

logger = logging.getLogger(__name__)


def _directions(rng: np.random.Generator, channels: int, count: int) -> np.ndarray:
    """``count`` orthonormal directions in R^channels, one per row."""
    gaussian = rng.standard_normal((channels, count))
    basis, _ = np.linalg.qr(gaussian)
    return basis.T


def _disk(shape, centre, radius) -> np.ndarray:
    rows, cols = np.ogrid[:shape[0], :shape[1]]
    return ((rows - centre[0]) ** 2 + (cols - centre[1]) ** 2) <= radius ** 2


def _blob_mask(shape, centres, radius) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for centre in centres:
        mask |= _disk(shape, centre, radius)
    return mask


def _random_centres(rng, cfg: SynthConfig) -> np.ndarray:
    r = cfg.blob_radius
    rows = rng.uniform(r, cfg.image_height - 1 - r, size=cfg.n_blobs)
    cols = rng.uniform(r, cfg.image_width - 1 - r, size=cfg.n_blobs)
    return np.stack([rows, cols], axis=1)


def _features(rng, cfg: SynthConfig, fg: np.ndarray, class_dir, distractors, level: str) -> FeatureMap:
    height, width = fg.shape
    picks = rng.integers(0, len(distractors), size=(height, width))
    means = np.where(fg[..., None], class_dir, distractors[picks])
    values = cfg.separation * means + cfg.noise * rng.standard_normal((height, width, cfg.channels))
    return FeatureMap(level=level, data=values.transpose(2, 0, 1))


def _stack(rng, cfg: SynthConfig, image_mask: np.ndarray, class_dir, distractors) -> FeatureStack:
    levels = {}
    for level, (height, width) in (('l3', (cfg.l3_height, cfg.l3_width)),
                                   ('l4', (cfg.l4_height, cfg.l4_width))):
        fg = resample_grid(image_mask.astype(np.float64), height, width, 'nearest') > 0.5
        levels[level] = _features(rng, cfg, fg, class_dir, distractors, level)
    return FeatureStack(**levels)


def synth_episode(cfg: SynthConfig, seed: int) -> Episode:
    """Build an episode whose foreground features sit near one class direction.

    Background pixels sit near one of ``cfg.n_distractors`` directions
    orthogonal to the class direction. Query blobs start at random positions
    and drift by ``cfg.motion`` image pixels per frame along a random heading,
    staying inside the frame.
    """
    rng = np.random.default_rng(seed)
    directions = _directions(rng, cfg.channels, cfg.n_distractors + 1)
    class_dir, distractors = directions[0], directions[1:]
    image_shape = (cfg.image_height, cfg.image_width)

    support = []
    for index in range(cfg.k_shots):
        mask = _blob_mask(image_shape, _random_centres(rng, cfg), cfg.blob_radius)
        l4_fg = resample_grid(mask.astype(np.float64), cfg.l4_height, cfg.l4_width, 'nearest')
        if not l4_fg.any():
            raise ConfigError(f"Support blob {index} vanished at l4 resolution")
        support.append(SupportItem(
            features=_stack(rng, cfg, mask, class_dir, distractors),
            mask=Mask(mask),
        ))

    start = _random_centres(rng, cfg)
    headings = rng.uniform(0.0, 2.0 * np.pi, size=cfg.n_blobs)
    velocity = cfg.motion * np.stack([np.sin(headings), np.cos(headings)], axis=1)
    low = cfg.blob_radius
    high = np.array([cfg.image_height - 1 - low, cfg.image_width - 1 - low])

    query = []
    for frame in range(cfg.t_frames):
        centres = np.clip(start + frame * velocity, low, high)
        mask = _blob_mask(image_shape, centres, cfg.blob_radius)
        query.append(QueryItem(
            features=_stack(rng, cfg, mask, class_dir, distractors),
            mask=Mask(mask),
        ))

    logger.info(
        "Synthesised episode K=%d T=%d C=%d l3=%dx%d seed=%d separation=%.3g",
        cfg.k_shots, cfg.t_frames, cfg.channels, cfg.l3_height, cfg.l3_width, seed, cfg.separation,
    )
    return Episode(support=support, query=query, class_id=cfg.class_id, seed=seed)
