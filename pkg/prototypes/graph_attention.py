"""Graph attention over prototype sets and the three-step prototype enhancement.

``G(tgt, src, lam)`` projects keys and values from the source set and
queries from the target set, weighs every (source i, target j) edge by the
cosine of key i and query j normalised over the targets of source i, and
returns ``query_j + lam * sum_i phi_ij * value_i`` for every target j.
"""
import logging
from typing import Sequence

import numpy as np

from .exceptions import PrototypeShapeError
from .models import GraphAttentionParams, PrototypeSet
from .similarity import pairwise_cosine, pairwise_cosine_backward

logger = logging.getLogger(__name__)

EPSILON_DEN = 1e-8
VALUE_FROM = ('source', 'target')


def graph_attention_forward(target: np.ndarray, source: np.ndarray, lam: float,
                            params: GraphAttentionParams, value_from: str = 'source'):
    if value_from not in VALUE_FROM:
        raise ValueError(f"value_from must be one of {VALUE_FROM}")
    if target.shape[1] != source.shape[1] or target.shape[1] != params.channels:
        raise PrototypeShapeError(
            f"Target ({target.shape[1]}), source ({source.shape[1]}) and params "
            f"({params.channels}) must share C"
        )
    if value_from == 'target' and len(target) != len(source):
        raise PrototypeShapeError("Values from the target set need as many targets as sources")

    keys = source @ params.w_k.T
    queries = target @ params.w_q.T
    values_input = source if value_from == 'source' else target
    values = values_input @ params.w_v.T

    similarity, cosine_cache = pairwise_cosine(keys, queries)
    denominator = similarity.sum(axis=1) + EPSILON_DEN
    if np.abs(denominator).min() < 1e-6:
        logger.debug("Graph attention edge normaliser close to zero (%.3g)", np.abs(denominator).min())
    weights = similarity / denominator[:, None]
    output = queries + lam * weights.T @ values
    cache = (target, source, values_input, lam, params, values, similarity, denominator, weights,
             cosine_cache, value_from)
    return output, cache


def graph_attention_backward(grad: np.ndarray, cache):
    (target, source, values_input, lam, params, values, similarity, denominator, weights,
     cosine_cache, value_from) = cache
    grad_queries = grad.copy()
    grad_weights = lam * values @ grad.T
    grad_values = lam * weights @ grad

    grad_denominator = -(grad_weights * similarity).sum(axis=1) / denominator ** 2
    grad_similarity = grad_weights / denominator[:, None] + grad_denominator[:, None]
    grad_keys, grad_q_cos = pairwise_cosine_backward(grad_similarity, cosine_cache)
    grad_queries += grad_q_cos

    grad_target = grad_queries @ params.w_q
    grad_source = grad_keys @ params.w_k
    if value_from == 'source':
        grad_source = grad_source + grad_values @ params.w_v
    else:
        grad_target = grad_target + grad_values @ params.w_v
    return {
        'w_k': grad_keys.T @ source,
        'w_q': grad_queries.T @ target,
        'w_v': grad_values.T @ values_input,
        'target': grad_target,
        'source': grad_source,
    }


def graph_attention(p_tgt: PrototypeSet, p_src: PrototypeSet, lam: float, params: GraphAttentionParams,
                    origin: str = None, value_from: str = 'source') -> PrototypeSet:
    output, _ = graph_attention_forward(p_tgt.prototypes, p_src.prototypes, lam, params, value_from)
    return p_tgt.with_rows(output, origin or p_tgt.origin)


def enhance_forward(support: np.ndarray, query: np.ndarray, blocks: Sequence[GraphAttentionParams],
                    lambda_self: float, lambda_co: float, value_from: str = 'source'):
    """Self-attend each side, then co-attend enhanced support (targets) to enhanced query (sources)."""
    support_block, query_block, co_block = blocks
    support_enhanced, support_cache = graph_attention_forward(
        support, support, lambda_self, support_block, value_from)
    query_enhanced, query_cache = graph_attention_forward(
        query, query, lambda_self, query_block, value_from)
    holistic, co_cache = graph_attention_forward(
        support_enhanced, query_enhanced, lambda_co, co_block, value_from)
    return (support_enhanced, query_enhanced, holistic), (support_cache, query_cache, co_cache)


def enhance_backward(grad: np.ndarray, cache):
    """Gradients of the holistic prototypes w.r.t. the three blocks and both raw sets."""
    support_cache, query_cache, co_cache = cache
    co = graph_attention_backward(grad, co_cache)
    support = graph_attention_backward(co['target'], support_cache)
    query = graph_attention_backward(co['source'], query_cache)
    return {
        'support_self': {name: support[name] for name in ('w_k', 'w_q', 'w_v')},
        'query_self': {name: query[name] for name in ('w_k', 'w_q', 'w_v')},
        'co': {name: co[name] for name in ('w_k', 'w_q', 'w_v')},
        'support': support['target'] + support['source'],
        'query': query['target'] + query['source'],
    }


def enhance_prototypes(p_s: PrototypeSet, p_q: PrototypeSet, params: Sequence[GraphAttentionParams],
                       value_from: str = 'source') -> PrototypeSet:
    """Holistic prototypes from raw support and query sets.

    ``params`` holds the support self-attention, query self-attention and
    co-attention blocks; the coefficients come from the first block.
    """
    if p_s.origin != 'support_raw' or p_q.origin != 'query_raw':
        raise PrototypeShapeError(f"Expected raw support/query sets, got {p_s.origin}/{p_q.origin}")
    coefficients = params[0]
    _, _, holistic = enhance_forward(
        p_s.prototypes, p_q.prototypes, params, coefficients.lambda_self, coefficients.lambda_co, value_from,
    )[0]
    return p_s.with_rows(holistic, 'holistic')
