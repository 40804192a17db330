from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from episodes.exceptions import InvariantError

RECALL_THRESHOLD = 0.5
DECAY_BINS = 4


def recall(scores: Sequence[float], threshold: float = RECALL_THRESHOLD) -> float:
    """Fraction of frames scoring above ``threshold``."""
    return float(np.mean(np.asarray(scores) > threshold))


def decay(scores: Sequence[float], n_bins: int = DECAY_BINS) -> float:
    """Mean score of the first quarter of the sequence minus that of the last quarter."""
    scores = np.asarray(scores, dtype=np.float64)
    ids = (np.round(np.linspace(1, len(scores), n_bins + 1) + 1e-10) - 1).astype(int)
    bins = [scores[ids[i]:ids[i + 1] + 1] for i in range(n_bins)]
    return float(bins[0].mean() - bins[-1].mean())


@dataclass(frozen=True)
class EvalResult:
    j_per_frame: Tuple[float, ...]
    f_per_frame: Tuple[float, ...]
    j_mean: float
    f_mean: float
    j_recall: float = 0.0
    f_recall: float = 0.0
    j_decay: float = 0.0
    f_decay: float = 0.0

    def __post_init__(self):
        self.clean()

    def clean(self):
        if len(self.j_per_frame) != len(self.f_per_frame):
            raise InvariantError("J and F must cover the same frames")
        for name in ('j_per_frame', 'f_per_frame'):
            values = getattr(self, name)
            if any(not 0.0 <= v <= 1.0 for v in values):
                raise InvariantError(f"{name} values must lie in [0, 1]")
        if abs(self.j_mean - float(np.mean(self.j_per_frame))) > 1e-12 or \
                abs(self.f_mean - float(np.mean(self.f_per_frame))) > 1e-12:
            raise InvariantError("Means must equal the per-frame averages")

    @classmethod
    def from_frames(cls, j_scores: Sequence[float], f_scores: Sequence[float]) -> 'EvalResult':
        j_scores = tuple(float(v) for v in j_scores)
        f_scores = tuple(float(v) for v in f_scores)
        return cls(
            j_per_frame=j_scores,
            f_per_frame=f_scores,
            j_mean=float(np.mean(j_scores)),
            f_mean=float(np.mean(f_scores)),
            j_recall=recall(j_scores),
            f_recall=recall(f_scores),
            j_decay=decay(j_scores),
            f_decay=decay(f_scores),
        )
