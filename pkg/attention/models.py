from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from episodes.exceptions import InvariantError
from episodes.models import FeatureMap
from prototypes.models import uniform_init

from .exceptions import AttentionShapeError

PROVENANCES = ('query', 'support')


def _frozen(values, ndim: int, what: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.ndim != ndim:
        raise InvariantError(f"{what} needs {ndim} dims, got shape {array.shape}")
    if not np.isfinite(array).all():
        raise InvariantError(f"{what} has non-finite entries")
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class TokenMatrix:
    """Pixels of several frames or images flattened to N x C rows.

    Rows run frame by frame, each frame row-major over (h, w), so
    ``layout = (units, height, width)`` restores the grids.
    """

    tokens: np.ndarray
    provenance: str
    layout: Tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, 'tokens', _frozen(self.tokens, 2, 'TokenMatrix'))
        object.__setattr__(self, 'layout', tuple(int(v) for v in self.layout))
        self.clean()

    def clean(self):
        if self.provenance not in PROVENANCES:
            raise InvariantError(f"Unknown token provenance {self.provenance!r}")
        units, height, width = self.layout
        if self.tokens.shape[0] != units * height * width:
            raise AttentionShapeError(
                f"{self.tokens.shape[0]} tokens do not fill {units} grids of {height}x{width}"
            )

    @property
    def channels(self) -> int:
        return self.tokens.shape[1]

    @property
    def units(self) -> int:
        return self.layout[0]

    @classmethod
    def from_feature_maps(cls, maps: Sequence[FeatureMap], provenance: str) -> 'TokenMatrix':
        spatial = maps[0].spatial
        if any(m.spatial != spatial for m in maps):
            raise AttentionShapeError("Token grids must share their spatial dims")
        return cls(np.concatenate([m.rows() for m in maps]), provenance, (len(maps),) + spatial)


@dataclass(frozen=True, eq=False)
class AttentionBlockParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        for name in ('w_q', 'w_k', 'w_v'):
            object.__setattr__(self, name, _frozen(getattr(self, name), 2, name))
        self.clean()

    def clean(self):
        shape = self.w_q.shape
        if shape[0] != shape[1] or self.w_k.shape != shape or self.w_v.shape != shape:
            raise InvariantError("Attention maps must all be C x C")

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def initialize(cls, channels: int, rng: np.random.Generator) -> 'AttentionBlockParams':
        shape = (channels, channels)
        return cls(
            w_q=uniform_init(rng, shape, channels),
            w_k=uniform_init(rng, shape, channels),
            w_v=uniform_init(rng, shape, channels),
        )

    @classmethod
    def identity(cls, channels: int) -> 'AttentionBlockParams':
        eye = np.eye(channels)
        return cls(w_q=eye, w_k=eye, w_v=eye)


@dataclass(frozen=True, eq=False)
class HolisticAttention:
    """T x 2C x H x W; channels [0, C) come from co-attention, [C, 2C) from self-attention."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'data', _frozen(self.data, 4, 'HolisticAttention'))
        self.clean()

    def clean(self):
        if self.data.shape[1] % 2:
            raise InvariantError(f"Holistic attention needs an even channel count, got {self.data.shape[1]}")

    @property
    def channels(self) -> int:
        """C of each half."""
        return self.data.shape[1] // 2

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def spatial(self) -> Tuple[int, int]:
        return self.data.shape[2], self.data.shape[3]

    @property
    def co_attention(self) -> np.ndarray:
        return self.data[:, :self.channels]

    @property
    def self_attention(self) -> np.ndarray:
        return self.data[:, self.channels:]
