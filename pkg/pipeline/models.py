from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from episodes.models import U64_MAX, SynthConfig
from prototypes.clustering import DEFAULT_RESTARTS
from segmentation.models import LossWeights
from segmentation.network import NetworkOptions
from segmentation.training import DEFAULT_LR, MIN_LOSS_REDUCTION

from .exceptions import RunConfigError


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs to run; field names double as the keys of a ``--config`` file."""

    k_shots: int = 5
    t_frames: int = 5
    n_prototypes: int = 5
    channels: int = 256
    in_channels: int = 256
    lambda_self: float = 0.8
    lambda_co: float = 0.2
    lambda_ce: float = 5.0
    lambda_iou: float = 1.0
    lambda_proto: float = 1.0
    tau_fg: float = 0.5
    seed: int = 0
    l3_height: int = 16
    l3_width: int = 28
    image_height: int = 32
    image_width: int = 56
    blob_radius: int = 6
    separation: float = 10.0
    noise: float = 1.0
    use_pgam: bool = True
    use_self_attention: bool = True
    share_attention: bool = False
    value_from: str = 'source'
    kmeans_restarts: int = DEFAULT_RESTARTS
    steps: int = 200
    lr: float = DEFAULT_LR
    max_grad_norm: Optional[float] = None
    min_loss_reduction: float = MIN_LOSS_REDUCTION
    n_episodes: int = 1
    episode_dir: Optional[Path] = None
    output_dir: Path = Path('out')

    def __post_init__(self):
        if self.output_dir is not None:
            object.__setattr__(self, 'output_dir', Path(self.output_dir))
        if self.episode_dir is not None:
            object.__setattr__(self, 'episode_dir', Path(self.episode_dir))
        self.clean()

    def clean(self):
        if not 0 <= self.seed <= U64_MAX:
            raise RunConfigError("seed must fit in 64 unsigned bits")
        if self.n_episodes < 1:
            raise RunConfigError("n_episodes must be >= 1")
        if self.steps < 1:
            raise RunConfigError("steps must be >= 1")

    @property
    def is_baseline(self) -> bool:
        return not self.use_pgam and not self.use_self_attention

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            k_shots=self.k_shots,
            t_frames=self.t_frames,
            channels=self.in_channels,
            l3_height=self.l3_height,
            l3_width=self.l3_width,
            image_height=self.image_height,
            image_width=self.image_width,
            blob_radius=self.blob_radius,
            separation=self.separation,
            noise=self.noise,
        )

    def network_options(self) -> NetworkOptions:
        return NetworkOptions(
            n_prototypes=self.n_prototypes,
            tau_fg=self.tau_fg,
            lambda_self=self.lambda_self,
            lambda_co=self.lambda_co,
            use_pgam=self.use_pgam,
            use_self_attention=self.use_self_attention,
            share_attention=self.share_attention,
            value_from=self.value_from,
            kmeans_restarts=self.kmeans_restarts,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_ce, self.lambda_iou, self.lambda_proto)
