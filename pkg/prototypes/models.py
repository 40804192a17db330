from dataclasses import dataclass

import numpy as np

from episodes.exceptions import InvariantError

ORIGINS = ('support_raw', 'query_raw', 'support_enhanced', 'query_enhanced', 'holistic')
SUPPORT_ORIGINS = ('support_raw', 'support_enhanced', 'holistic')
QUERY_ORIGINS = ('query_raw', 'query_enhanced')

LAMBDA_SELF = 0.8
LAMBDA_CO = 0.2


def _frozen(values, ndim: int, what: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.ndim != ndim:
        raise InvariantError(f"{what} needs {ndim} dims, got shape {array.shape}")
    if not np.isfinite(array).all():
        raise InvariantError(f"{what} has non-finite entries")
    array.flags.writeable = False
    return array


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass(frozen=True, eq=False)
class PrototypeSet:
    """N x C prototype rows; N is n_per_unit times the number of images or frames."""

    prototypes: np.ndarray
    origin: str
    n_per_unit: int
    duplicated: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'prototypes', _frozen(self.prototypes, 2, 'PrototypeSet'))
        self.clean()

    def clean(self):
        if self.origin not in ORIGINS:
            raise InvariantError(f"Unknown prototype origin {self.origin!r}")
        if self.n_per_unit < 1:
            raise InvariantError("n_per_unit must be positive")
        if self.size % self.n_per_unit:
            raise InvariantError(
                f"{self.size} prototypes are not a multiple of N_p={self.n_per_unit}"
            )

    @property
    def size(self) -> int:
        return self.prototypes.shape[0]

    @property
    def channels(self) -> int:
        return self.prototypes.shape[1]

    @property
    def units(self) -> int:
        """K for support-side sets, T for query-side sets."""
        return self.size // self.n_per_unit

    def with_rows(self, rows: np.ndarray, origin: str) -> 'PrototypeSet':
        return PrototypeSet(rows, origin=origin, n_per_unit=self.n_per_unit, duplicated=self.duplicated)


@dataclass(frozen=True, eq=False)
class GraphAttentionParams:
    w_k: np.ndarray
    w_q: np.ndarray
    w_v: np.ndarray
    lambda_self: float = LAMBDA_SELF
    lambda_co: float = LAMBDA_CO

    def __post_init__(self):
        for name in ('w_k', 'w_q', 'w_v'):
            object.__setattr__(self, name, _frozen(getattr(self, name), 2, name))
        self.clean()

    def clean(self):
        shape = self.w_k.shape
        if shape[0] != shape[1] or self.w_q.shape != shape or self.w_v.shape != shape:
            raise InvariantError("Graph attention maps must all be C x C")
        if self.lambda_self < 0 or self.lambda_co < 0:
            raise InvariantError("Graph attention coefficients must be >= 0")

    @property
    def channels(self) -> int:
        return self.w_k.shape[0]

    @classmethod
    def initialize(cls, channels: int, rng: np.random.Generator, **coefficients) -> 'GraphAttentionParams':
        shape = (channels, channels)
        return cls(
            w_k=uniform_init(rng, shape, channels),
            w_q=uniform_init(rng, shape, channels),
            w_v=uniform_init(rng, shape, channels),
            **coefficients,
        )

    @classmethod
    def identity(cls, channels: int, **coefficients) -> 'GraphAttentionParams':
        eye = np.eye(channels)
        return cls(w_k=eye, w_q=eye, w_v=eye, **coefficients)


@dataclass(frozen=True, eq=False)
class ProjectionParams:
    """The 1x1 convolution: ``weight`` maps C_in input channels to C (shape C x C_in)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'weight', _frozen(self.weight, 2, 'projection weight'))
        object.__setattr__(self, 'bias', _frozen(self.bias, 1, 'projection bias'))
        self.clean()

    def clean(self):
        if self.bias.shape[0] != self.weight.shape[0]:
            raise InvariantError("Projection bias must have one entry per output channel")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def initialize(cls, in_channels: int, out_channels: int, rng: np.random.Generator) -> 'ProjectionParams':
        return cls(
            weight=uniform_init(rng, (out_channels, in_channels), in_channels),
            bias=np.zeros(out_channels),
        )

    @classmethod
    def identity(cls, channels: int) -> 'ProjectionParams':
        return cls(weight=np.eye(channels), bias=np.zeros(channels))
