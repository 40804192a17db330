from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .exceptions import ConfigError, InvariantError, NonFiniteError, ShapeError

LEVELS = ('l3', 'l4')
U64_MAX = 2 ** 64 - 1


def half_up(size: int) -> int:
    """Spatial size of the next pyramid level (stride 2, rounding up)."""
    return -(-size // 2)


def _frozen_array(values, ndim: int, what: str) -> np.ndarray:
    data = np.array(values, dtype=np.float32)
    if data.ndim != ndim:
        raise ShapeError(f"{what} needs {ndim} dims, got shape {data.shape}")
    if min(data.shape) < 1:
        raise ShapeError(f"{what} has an empty dimension: {data.shape}")
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{what} contains NaN or Inf values")
    data.flags.writeable = False
    return data


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """A C x H x W float32 grid at one pyramid level."""

    level: str
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'data', _frozen_array(self.data, 3, 'FeatureMap'))
        self.clean()

    def clean(self):
        if self.level not in LEVELS:
            raise InvariantError(f"Unknown pyramid level {self.level!r}")

    def __eq__(self, other):
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return self.level == other.level and np.array_equal(self.data, other.data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def spatial(self) -> Tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    def rows(self) -> np.ndarray:
        """Pixels as an (H*W) x C float64 matrix, row-major over (h, w)."""
        return self.data.reshape(self.channels, -1).T.astype(np.float64)

    @classmethod
    def from_rows(cls, level: str, rows: np.ndarray, height: int, width: int) -> 'FeatureMap':
        rows = np.asarray(rows)
        if rows.shape[0] != height * width:
            raise ShapeError(f"{rows.shape[0]} rows cannot fill a {height}x{width} grid")
        return cls(level=level, data=rows.T.reshape(rows.shape[1], height, width))


@dataclass(frozen=True, eq=False)
class Mask:
    """An H x W grid of values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'data', _frozen_array(self.data, 2, 'Mask'))
        self.clean()

    def clean(self):
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise InvariantError(
                f"Mask values must lie in [0, 1], got [{self.data.min()}, {self.data.max()}]"
            )

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return np.array_equal(self.data, other.data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def spatial(self) -> Tuple[int, int]:
        return self.data.shape

    @property
    def is_binary(self) -> bool:
        return bool(np.isin(self.data, (0.0, 1.0)).all())

    @property
    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.data))

    def values(self) -> np.ndarray:
        return self.data.astype(np.float64)


@dataclass(frozen=True, eq=False)
class FeatureStack:
    """The l3 and l4 features of one image or frame."""

    l3: FeatureMap
    l4: FeatureMap

    def __post_init__(self):
        self.clean()

    def clean(self):
        if self.l3.level != 'l3' or self.l4.level != 'l4':
            raise InvariantError("FeatureStack expects an l3 map and an l4 map")
        if self.l3.channels != self.l4.channels:
            raise InvariantError(
                f"l3 has {self.l3.channels} channels but l4 has {self.l4.channels}"
            )
        expected = (half_up(self.l3.height), half_up(self.l3.width))
        if self.l4.spatial != expected:
            raise InvariantError(
                f"l4 grid {self.l4.spatial} must be half of l3 {self.l3.spatial} (rounding up)"
            )

    def __eq__(self, other):
        if not isinstance(other, FeatureStack):
            return NotImplemented
        return self.l3 == other.l3 and self.l4 == other.l4

    def level(self, name: str) -> FeatureMap:
        return getattr(self, name)


@dataclass(frozen=True, eq=False)
class SupportItem:
    features: FeatureStack
    mask: Mask

    def __eq__(self, other):
        if not isinstance(other, SupportItem):
            return NotImplemented
        return self.features == other.features and self.mask == other.mask


@dataclass(frozen=True, eq=False)
class QueryItem:
    features: FeatureStack
    mask: Optional[Mask] = None

    def __eq__(self, other):
        if not isinstance(other, QueryItem):
            return NotImplemented
        if (self.mask is None) != (other.mask is None):
            return False
        return self.features == other.features and (self.mask is None or self.mask == other.mask)


@dataclass(frozen=True, eq=False)
class Episode:
    """One few-shot task: K annotated support images and T query frames."""

    support: Tuple[SupportItem, ...]
    query: Tuple[QueryItem, ...]
    class_id: str = 'unknown'
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'support', tuple(self.support))
        object.__setattr__(self, 'query', tuple(self.query))
        self.clean()

    def clean(self):
        if not self.support:
            raise InvariantError("An episode needs at least one support image")
        if not self.query:
            raise InvariantError("An episode needs at least one query frame")
        if not 0 <= int(self.seed) <= U64_MAX:
            raise InvariantError(f"Seed {self.seed} is not an unsigned 64-bit integer")

        reference = self.support[0].features
        mask_shape = self.support[0].mask.spatial
        stacks = [item.features for item in self.support] + [item.features for item in self.query]
        for stack in stacks:
            if stack.l3.channels != reference.l3.channels:
                raise InvariantError("All feature maps of an episode must share C")
            if stack.l3.spatial != reference.l3.spatial or stack.l4.spatial != reference.l4.spatial:
                raise InvariantError("All feature maps of an episode must share per-level dims")

        for index, item in enumerate(self.support):
            if not item.mask.is_binary:
                raise InvariantError(f"Support mask {index} is not binary")
            if item.mask.foreground_count == 0:
                raise InvariantError(f"Support mask {index} has no foreground pixel")
            if item.mask.spatial != mask_shape:
                raise InvariantError(f"Support mask {index} has dims {item.mask.spatial}, expected {mask_shape}")

        for index, item in enumerate(self.query):
            if item.mask is None:
                continue
            if not item.mask.is_binary:
                raise InvariantError(f"Query mask {index} is not binary")
            if item.mask.spatial != mask_shape:
                raise InvariantError(f"Query mask {index} has dims {item.mask.spatial}, expected {mask_shape}")

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            self.class_id == other.class_id
            and int(self.seed) == int(other.seed)
            and self.support == other.support
            and self.query == other.query
        )

    @property
    def k_shots(self) -> int:
        return len(self.support)

    @property
    def t_frames(self) -> int:
        return len(self.query)

    @property
    def channels(self) -> int:
        return self.support[0].features.l3.channels

    @property
    def l3_shape(self) -> Tuple[int, int]:
        return self.support[0].features.l3.spatial

    @property
    def l4_shape(self) -> Tuple[int, int]:
        return self.support[0].features.l4.spatial

    @property
    def mask_shape(self) -> Tuple[int, int]:
        return self.support[0].mask.spatial

    @property
    def has_query_masks(self) -> bool:
        return all(item.mask is not None for item in self.query)


@dataclass(frozen=True)
class SynthConfig:
    """Shape and signal of a synthetic episode standing in for encoder output."""

    k_shots: int = 5
    t_frames: int = 5
    channels: int = 256
    l3_height: int = 16
    l3_width: int = 28
    image_height: int = 32
    image_width: int = 56
    n_blobs: int = 1
    blob_radius: int = 6
    separation: float = 10.0
    noise: float = 1.0
    n_distractors: int = 3
    motion: float = 1.0
    class_id: str = 'synthetic'

    def __post_init__(self):
        self.clean()

    @property
    def l4_height(self) -> int:
        return half_up(self.l3_height)

    @property
    def l4_width(self) -> int:
        return half_up(self.l3_width)

    def clean(self):
        for name in ('k_shots', 't_frames', 'channels', 'l3_height', 'l3_width',
                     'image_height', 'image_width', 'n_blobs', 'blob_radius', 'n_distractors'):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.separation < 0:
            raise ConfigError("separation must be >= 0")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if self.channels < self.n_distractors + 1:
            raise ConfigError(
                f"{self.channels} channels cannot hold a class direction and "
                f"{self.n_distractors} orthogonal distractors"
            )
        if self.image_height < self.l3_height or self.image_width < self.l3_width:
            raise ConfigError("The image grid must be at least as large as the l3 grid")
        diameter = 2 * self.blob_radius + 1
        if diameter > self.image_height or diameter > self.image_width:
            raise ConfigError(
                f"A blob of radius {self.blob_radius} does not fit a "
                f"{self.image_height}x{self.image_width} grid"
            )
        stride = max(-(-self.image_height // self.l4_height), -(-self.image_width // self.l4_width))
        if self.blob_radius < stride + 1:
            raise ConfigError(
                f"blob_radius {self.blob_radius} is below the l4 stride {stride}; "
                "blobs could vanish at l4 resolution"
            )
