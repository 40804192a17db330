"""The full episode pipeline as one differentiable network.

Everything that does not depend on learnable parameters (support masks on
the feature grids, pseudo-masks and their l3 upsampling) is computed once by
:func:`prepare_inputs`. :func:`network_forward` then runs projection,
clustering, prototype enhancement, prototype attention, decoding and the
losses, and :func:`network_backward` returns gradients for every parameter
under a flat ``group.block.name`` key. Cluster centroids are constants in the
backward pass.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from attention.blocks import (
    co_attention_backward,
    co_attention_forward,
    holistic_backward,
    self_attention_backward,
    self_attention_forward,
    tokens_to_grid,
)
from attention.models import AttentionBlockParams
from episodes.exceptions import ConfigError
from episodes.models import Episode
from episodes.resampling import resample_grid, resample_mask
from prototypes.clustering import DEFAULT_RESTARTS, TAU_FG, cluster_query_rows, cluster_support_rows
from prototypes.graph_attention import VALUE_FROM, enhance_backward, enhance_forward
from prototypes.models import LAMBDA_CO, LAMBDA_SELF, GraphAttentionParams, ProjectionParams, PrototypeSet
from prototypes.projection import project_backward, project_forward
from prototypes.pseudo_masks import pseudo_mask_forward

from .head import decode_backward, decode_forward
from .losses import ce_backward, ce_forward, iou_backward, iou_forward, proto_backward, proto_forward
from .models import HeadParams, LossReport, LossWeights

logger = logging.getLogger(__name__)

GRAPH_BLOCKS = ('support_self', 'query_self', 'co')
ATTENTION_BLOCKS = ('co_inner', 'co_outer', 'self_inner', 'self_outer')
GRAPH_NAMES = ('w_k', 'w_q', 'w_v')
ATTENTION_NAMES = ('w_q', 'w_k', 'w_v')


@dataclass(frozen=True)
class NetworkOptions:
    n_prototypes: int = 5
    tau_fg: float = TAU_FG
    lambda_self: float = LAMBDA_SELF
    lambda_co: float = LAMBDA_CO
    use_pgam: bool = True
    use_self_attention: bool = True
    share_attention: bool = False
    value_from: str = 'source'
    kmeans_restarts: int = DEFAULT_RESTARTS

    def __post_init__(self):
        if self.n_prototypes < 1:
            raise ConfigError("n_prototypes must be positive")
        if not 0.0 <= self.tau_fg <= 1.0:
            raise ConfigError("tau_fg must lie in [0, 1]")
        if self.lambda_self < 0 or self.lambda_co < 0:
            raise ConfigError("Graph attention coefficients must be >= 0")
        if self.value_from not in VALUE_FROM:
            raise ConfigError(f"value_from must be one of {VALUE_FROM}")

    @property
    def is_baseline(self) -> bool:
        return not self.use_pgam and not self.use_self_attention


@dataclass(frozen=True, eq=False)
class ModelParams:
    projection: ProjectionParams
    graph: Mapping[str, GraphAttentionParams]
    attention: Mapping[str, AttentionBlockParams]
    head: HeadParams

    @classmethod
    def initialize(cls, in_channels: int, channels: int, rng: np.random.Generator,
                   lambda_self: float = LAMBDA_SELF, lambda_co: float = LAMBDA_CO) -> 'ModelParams':
        projection = ProjectionParams.initialize(in_channels, channels, rng)
        graph = {name: GraphAttentionParams.initialize(channels, rng, lambda_self=lambda_self, lambda_co=lambda_co)
                 for name in GRAPH_BLOCKS}
        attention = {name: AttentionBlockParams.initialize(channels, rng) for name in ATTENTION_BLOCKS}
        return cls(projection, graph, attention, HeadParams.initialize(channels, rng))

    @property
    def channels(self) -> int:
        return self.projection.out_channels

    def to_dict(self) -> Dict[str, np.ndarray]:
        flat = {
            'projection.weight': self.projection.weight,
            'projection.bias': self.projection.bias,
        }
        for block in GRAPH_BLOCKS:
            for name in GRAPH_NAMES:
                flat[f'graph.{block}.{name}'] = getattr(self.graph[block], name)
        for block in ATTENTION_BLOCKS:
            for name in ATTENTION_NAMES:
                flat[f'attention.{block}.{name}'] = getattr(self.attention[block], name)
        flat['head.proj'] = self.head.proj
        flat['head.bias'] = np.array(self.head.bias)
        return flat

    @classmethod
    def from_dict(cls, flat: Mapping[str, np.ndarray], lambda_self: float = LAMBDA_SELF,
                  lambda_co: float = LAMBDA_CO) -> 'ModelParams':
        graph = {
            block: GraphAttentionParams(*(flat[f'graph.{block}.{name}'] for name in GRAPH_NAMES),
                                        lambda_self=lambda_self, lambda_co=lambda_co)
            for block in GRAPH_BLOCKS
        }
        attention = {
            block: AttentionBlockParams(**{name: flat[f'attention.{block}.{name}'] for name in ATTENTION_NAMES})
            for block in ATTENTION_BLOCKS
        }
        return cls(
            projection=ProjectionParams(flat['projection.weight'], flat['projection.bias']),
            graph=graph,
            attention=attention,
            head=HeadParams(flat['head.proj'], float(flat['head.bias'])),
        )

    def updated(self, grads: Mapping[str, np.ndarray], lr: float) -> 'ModelParams':
        lambdas = self.graph['co']
        flat = {key: value - lr * grads[key] for key, value in self.to_dict().items()}
        return ModelParams.from_dict(flat, lambdas.lambda_self, lambdas.lambda_co)


@dataclass(frozen=True, eq=False)
class EpisodeInputs:
    support_rows: Tuple[np.ndarray, ...]
    support_weights: Tuple[np.ndarray, ...]
    query_rows: np.ndarray
    query_weights: np.ndarray
    pseudo_masks: np.ndarray
    layout: Tuple[int, int, int]
    mask_shape: Tuple[int, int]
    gt: Optional[np.ndarray]
    seed: int

    @property
    def k_shots(self) -> int:
        return len(self.support_rows)

    @property
    def t_frames(self) -> int:
        return self.query_rows.shape[0]

    @property
    def in_channels(self) -> int:
        return self.query_rows.shape[2]


def prepare_inputs(episode: Episode, seed: Optional[int] = None) -> EpisodeInputs:
    l3_h, l3_w = episode.l3_shape
    l4_h, l4_w = episode.l4_shape
    support_l4 = [item.features.l4.rows() for item in episode.support]
    support_l4_weights = [resample_mask(item.mask, l4_h, l4_w).values().ravel() for item in episode.support]
    query_l4 = np.stack([item.features.l4.rows() for item in episode.query])
    pseudo, _ = pseudo_mask_forward(query_l4, support_l4, support_l4_weights)
    pseudo = pseudo.reshape(episode.t_frames, l4_h, l4_w)
    query_weights = np.clip(resample_grid(pseudo, l3_h, l3_w, 'bilinear'), 0.0, 1.0)

    gt = None
    if episode.has_query_masks:
        gt = np.stack([item.mask.values() for item in episode.query])
    return EpisodeInputs(
        support_rows=tuple(item.features.l3.rows() for item in episode.support),
        support_weights=tuple(resample_mask(item.mask, l3_h, l3_w).values().ravel() for item in episode.support),
        query_rows=np.stack([item.features.l3.rows() for item in episode.query]),
        query_weights=query_weights.reshape(episode.t_frames, -1),
        pseudo_masks=pseudo,
        layout=(episode.t_frames, l3_h, l3_w),
        mask_shape=episode.mask_shape,
        gt=gt,
        seed=int(episode.seed if seed is None else seed),
    )


def cluster_prototypes(inputs: EpisodeInputs, support_proj, query_proj,
                       options: NetworkOptions) -> Dict[str, PrototypeSet]:
    """Raw prototype sets. Without enhancement only the middle query frame is clustered, into N_p*K rows."""
    n_p = options.n_prototypes
    if options.use_pgam:
        return {
            'support_raw': cluster_support_rows(support_proj, inputs.support_weights, n_p, inputs.seed,
                                                n_init=options.kmeans_restarts),
            'query_raw': cluster_query_rows(list(query_proj), list(inputs.query_weights), n_p, inputs.seed,
                                            tau_fg=options.tau_fg, n_init=options.kmeans_restarts),
        }
    middle = inputs.t_frames // 2
    return {
        'query_raw': cluster_query_rows([query_proj[middle]], [inputs.query_weights[middle]], n_p, inputs.seed,
                                        tau_fg=options.tau_fg, n_init=options.kmeans_restarts,
                                        n_clusters=n_p * inputs.k_shots),
    }


@dataclass(eq=False)
class ForwardResult:
    probabilities: np.ndarray
    holistic: np.ndarray
    prototypes: Dict[str, PrototypeSet]
    report: Optional[LossReport]
    cache: tuple = field(repr=False, default=())


def _attention_pair(params: ModelParams, prefix: str, options: NetworkOptions):
    inner = params.attention[f'{prefix}_inner']
    outer = inner if options.share_attention else params.attention[f'{prefix}_outer']
    return inner, outer


def network_forward(inputs: EpisodeInputs, params: ModelParams, options: NetworkOptions = NetworkOptions(),
                    weights: LossWeights = LossWeights(),
                    frozen_prototypes: Optional[Mapping[str, PrototypeSet]] = None,
                    counter=None) -> ForwardResult:
    projection_caches = []
    support_proj = []
    for rows, mask in zip(inputs.support_rows, inputs.support_weights):
        projected, cache = project_forward(rows, mask, params.projection)
        support_proj.append(projected)
        projection_caches.append(cache)
    query_proj = []
    for rows, mask in zip(inputs.query_rows, inputs.query_weights):
        projected, cache = project_forward(rows, mask, params.projection)
        query_proj.append(projected)
        projection_caches.append(cache)
    query_proj = np.stack(query_proj)

    raw = dict(frozen_prototypes) if frozen_prototypes is not None else \
        cluster_prototypes(inputs, support_proj, query_proj, options)
    enhance_cache = None
    if options.use_pgam:
        blocks = [params.graph[name] for name in GRAPH_BLOCKS]
        (_, _, holistic_rows), enhance_cache = enhance_forward(
            raw['support_raw'].prototypes, raw['query_raw'].prototypes, blocks,
            options.lambda_self, options.lambda_co, options.value_from,
        )
        holistic = raw['support_raw'].with_rows(holistic_rows, 'holistic')
    else:
        holistic = raw['query_raw'].with_rows(raw['query_raw'].prototypes, 'holistic')
    prototypes = {**raw, 'holistic': holistic}

    query_tokens = query_proj.reshape(-1, params.channels)
    support_tokens = np.concatenate(support_proj)
    co_out, co_cache = co_attention_forward(query_tokens, support_tokens, holistic.prototypes,
                                            *_attention_pair(params, 'co', options), counter=counter)
    self_cache = None
    if options.use_self_attention:
        self_out, self_cache = self_attention_forward(query_tokens, holistic.prototypes,
                                                      *_attention_pair(params, 'self', options), counter=counter)
    else:
        self_out = np.zeros_like(co_out)
    a_h = np.concatenate([tokens_to_grid(co_out, inputs.layout), tokens_to_grid(self_out, inputs.layout)], axis=1)
    probabilities, decode_cache = decode_forward(a_h, params.head, *inputs.mask_shape)

    report, loss_caches = None, None
    if inputs.gt is not None:
        ce, ce_cache = ce_forward(probabilities, inputs.gt)
        iou, iou_cache = iou_forward(probabilities, inputs.gt)
        proto, proto_cache = proto_forward(holistic.prototypes, 1.0)
        total = weights.lambda_ce * ce + weights.lambda_iou * iou + weights.lambda_proto * proto
        report = LossReport(ce=ce, iou=iou, proto=proto, total=total, mean_cosine=proto)
        loss_caches = (ce_cache, iou_cache, proto_cache, weights)

    cache = (projection_caches, enhance_cache, co_cache, self_cache, decode_cache, loss_caches, options)
    return ForwardResult(probabilities, a_h, prototypes, report, cache)


def _zero_grads(params: ModelParams) -> Dict[str, np.ndarray]:
    return {key: np.zeros_like(value, dtype=np.float64) for key, value in params.to_dict().items()}


def _add_attention(grads, prefix: str, block_grads, options: NetworkOptions):
    inner_key = f'attention.{prefix}_inner'
    outer_key = inner_key if options.share_attention else f'attention.{prefix}_outer'
    for name in ATTENTION_NAMES:
        grads[f'{inner_key}.{name}'] += block_grads['inner'][name]
        grads[f'{outer_key}.{name}'] += block_grads['outer'][name]


def network_backward(result: ForwardResult, params: ModelParams) -> Dict[str, np.ndarray]:
    """Gradients of the weighted total loss; needs a forward pass with ground truth."""
    projection_caches, enhance_cache, co_cache, self_cache, decode_cache, loss_caches, options = result.cache
    if loss_caches is None:
        raise ConfigError("Backward pass needs query ground-truth masks")
    ce_cache, iou_cache, proto_cache, weights = loss_caches
    grads = _zero_grads(params)

    grad_probabilities = weights.lambda_ce * ce_backward(ce_cache) + weights.lambda_iou * iou_backward(iou_cache)
    head = decode_backward(grad_probabilities, decode_cache)
    grads['head.proj'] += head['proj']
    grads['head.bias'] += head['bias']
    grad_co, grad_self = holistic_backward(head['holistic'])

    co = co_attention_backward(grad_co, co_cache)
    _add_attention(grads, 'co', co, options)
    grad_query_tokens = co['query']
    grad_support_tokens = co['support']
    grad_prototypes = co['prototypes'] + weights.lambda_proto * proto_backward(proto_cache)
    if self_cache is not None:
        own = self_attention_backward(grad_self, self_cache)
        _add_attention(grads, 'self', own, options)
        grad_query_tokens = grad_query_tokens + own['query']
        grad_prototypes = grad_prototypes + own['prototypes']

    if enhance_cache is not None:
        enhanced = enhance_backward(grad_prototypes, enhance_cache)
        for block in GRAPH_BLOCKS:
            for name in GRAPH_NAMES:
                grads[f'graph.{block}.{name}'] += enhanced[block][name]

    k_shots = len(projection_caches) - result.probabilities.shape[0]
    support_grads = np.split(grad_support_tokens, k_shots)
    query_grads = grad_query_tokens.reshape(result.probabilities.shape[0], -1, params.channels)
    for grad, cache in zip(list(support_grads) + list(query_grads), projection_caches):
        projection = project_backward(grad, cache)
        grads['projection.weight'] += projection['weight']
        grads['projection.bias'] += projection['bias']
    return grads
