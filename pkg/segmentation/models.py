import csv
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Tuple

import numpy as np

from episodes.exceptions import InvariantError, TensorIOError
from prototypes.models import uniform_init


@dataclass(frozen=True, eq=False)
class HeadParams:
    """Per-channel weights over the 2C holistic channels plus a scalar bias."""

    proj: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        proj = np.array(self.proj, dtype=np.float64)
        if proj.ndim != 1:
            raise InvariantError(f"Head weights must be a vector, got shape {proj.shape}")
        proj.flags.writeable = False
        object.__setattr__(self, 'proj', proj)
        object.__setattr__(self, 'bias', float(self.bias))
        self.clean()

    def clean(self):
        if not np.isfinite(self.proj).all() or not np.isfinite(self.bias):
            raise InvariantError("Head parameters must be finite")

    @property
    def channels(self) -> int:
        return self.proj.shape[0]

    @classmethod
    def initialize(cls, channels: int, rng: np.random.Generator) -> 'HeadParams':
        """``channels`` is C; the head reads 2C channels."""
        return cls(proj=uniform_init(rng, 2 * channels, 2 * channels), bias=0.0)


@dataclass(frozen=True)
class LossWeights:
    lambda_ce: float = 5.0
    lambda_iou: float = 1.0
    lambda_proto: float = 1.0

    def __post_init__(self):
        if min(self.lambda_ce, self.lambda_iou, self.lambda_proto) < 0:
            raise InvariantError("Loss weights must be >= 0")


@dataclass(frozen=True)
class LossReport:
    """Loss terms of one evaluation; ``grad_check`` maps a parameter group to ``(passed, max_rel_error)``."""

    ce: float
    iou: float
    proto: float
    total: float
    grad_check: Dict[str, Tuple[bool, float]] = field(default_factory=dict)
    mean_cosine: float = float('nan')

    @property
    def is_finite(self) -> bool:
        return bool(np.isfinite([self.ce, self.iou, self.proto, self.total]).all())

    @property
    def failed_groups(self) -> List[str]:
        return [group for group, (passed, _) in self.grad_check.items() if not passed]

    def with_grad_check(self, errors: Mapping[str, float], tolerance: float) -> 'LossReport':
        return replace(self, grad_check={group: (error <= tolerance, float(error)) for group, error in errors.items()})


TRAJECTORY_HEADER = ('step', 'ce', 'iou', 'proto', 'total')


def write_trajectory(path, reports) -> None:
    """``step,ce,iou,proto,total`` with 9 significant digits."""
    try:
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(TRAJECTORY_HEADER)
            for step, report in enumerate(reports):
                values = (report.ce, report.iou, report.proto, report.total)
                writer.writerow([step] + [f"{value:.9g}" for value in values])
    except OSError as exc:
        raise TensorIOError(path, f"write failed: {exc.strerror or exc}") from exc
