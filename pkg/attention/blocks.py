"""Skip-connected attention and its prototype-factored compositions.

``A(Q, K, V) = Q Wq' + softmax(Q Wq' (K Wk')' / sqrt(C)) V Wv'`` on row
matrices. Co-attention routes query tokens through the holistic prototypes,
which first attend to the support tokens; self-attention does the same with
the query tokens in the support role. Neither ever forms a query-by-support
score matrix.
"""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from prototypes.models import PrototypeSet
from verify.models import CostCounter

from .exceptions import AttentionShapeError
from .models import AttentionBlockParams, HolisticAttention, TokenMatrix

logger = logging.getLogger(__name__)

BLOCK_NAMES = ('w_q', 'w_k', 'w_v')


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=1, keepdims=True)


def attention_forward(queries: np.ndarray, keys: np.ndarray, values: np.ndarray,
                      params: AttentionBlockParams, counter: Optional[CostCounter] = None):
    if keys.shape[0] != values.shape[0]:
        raise AttentionShapeError(f"{keys.shape[0]} keys but {values.shape[0]} values")
    channels = params.channels
    for name, matrix in (('queries', queries), ('keys', keys), ('values', values)):
        if matrix.ndim != 2 or matrix.shape[1] != channels:
            raise AttentionShapeError(f"{name} must be N x {channels}, got {matrix.shape}")

    q_proj = queries @ params.w_q.T
    k_proj = keys @ params.w_k.T
    v_proj = values @ params.w_v.T
    weights = softmax_rows(q_proj @ k_proj.T / np.sqrt(channels))
    output = q_proj + weights @ v_proj
    if counter is not None:
        counter.add_attention_block(queries.shape[0], keys.shape[0], channels)
    return output, (queries, keys, values, params, q_proj, k_proj, v_proj, weights)


def attention_backward(grad: np.ndarray, cache):
    queries, keys, values, params, q_proj, k_proj, v_proj, weights = cache
    scale = np.sqrt(params.channels)
    grad_weights = grad @ v_proj.T
    grad_v = weights.T @ grad
    grad_scores = weights * (grad_weights - (grad_weights * weights).sum(axis=1, keepdims=True))
    grad_q = grad + grad_scores @ k_proj / scale
    grad_k = grad_scores.T @ q_proj / scale
    return {
        'w_q': grad_q.T @ queries,
        'w_k': grad_k.T @ keys,
        'w_v': grad_v.T @ values,
        'queries': grad_q @ params.w_q,
        'keys': grad_k @ params.w_k,
        'values': grad_v @ params.w_v,
    }


def attention(queries: np.ndarray, keys: np.ndarray, values: np.ndarray, params: AttentionBlockParams,
              counter: Optional[CostCounter] = None) -> np.ndarray:
    output, _ = attention_forward(np.asarray(queries, dtype=np.float64), np.asarray(keys, dtype=np.float64),
                                  np.asarray(values, dtype=np.float64), params, counter)
    return output


def _weights(grads) -> dict:
    return {name: grads[name] for name in BLOCK_NAMES}


def co_attention_forward(query: np.ndarray, support: np.ndarray, prototypes: np.ndarray,
                         inner: AttentionBlockParams, outer: AttentionBlockParams,
                         counter: Optional[CostCounter] = None):
    """``A(query, P, A(P, support, support))``."""
    refined, inner_cache = attention_forward(prototypes, support, support, inner, counter)
    output, outer_cache = attention_forward(query, prototypes, refined, outer, counter)
    logger.debug("Co-attention over %d prototypes: %d query rows, %d support rows",
                 len(prototypes), len(query), len(support))
    return output, (inner_cache, outer_cache)


def co_attention_backward(grad: np.ndarray, cache):
    inner_cache, outer_cache = cache
    outer = attention_backward(grad, outer_cache)
    inner = attention_backward(outer['values'], inner_cache)
    return {
        'inner': _weights(inner),
        'outer': _weights(outer),
        'query': outer['queries'],
        'support': inner['keys'] + inner['values'],
        'prototypes': outer['keys'] + inner['queries'],
    }


def self_attention_forward(query: np.ndarray, prototypes: np.ndarray,
                           inner: AttentionBlockParams, outer: AttentionBlockParams,
                           counter: Optional[CostCounter] = None):
    """``A(query, P, A(P, query, query))``."""
    return co_attention_forward(query, query, prototypes, inner, outer, counter)


def self_attention_backward(grad: np.ndarray, cache):
    grads = co_attention_backward(grad, cache)
    return {
        'inner': grads['inner'],
        'outer': grads['outer'],
        'query': grads['query'] + grads['support'],
        'prototypes': grads['prototypes'],
    }


def _check_holistic(prototypes: PrototypeSet, query: TokenMatrix):
    if prototypes.origin != 'holistic':
        raise AttentionShapeError(f"Expected holistic prototypes, got {prototypes.origin}")
    if query.provenance != 'query':
        raise AttentionShapeError("The first token matrix must hold query tokens")


def prototype_co_attention(t_q: TokenMatrix, t_s: TokenMatrix, p_h: PrototypeSet,
                           params: Sequence[AttentionBlockParams],
                           counter: Optional[CostCounter] = None) -> np.ndarray:
    _check_holistic(p_h, t_q)
    if t_s.provenance != 'support':
        raise AttentionShapeError("The second token matrix must hold support tokens")
    inner, outer = params
    output, _ = co_attention_forward(t_q.tokens, t_s.tokens, p_h.prototypes, inner, outer, counter)
    return output


def prototype_self_attention(t_q: TokenMatrix, p_h: PrototypeSet, params: Sequence[AttentionBlockParams],
                             counter: Optional[CostCounter] = None) -> np.ndarray:
    _check_holistic(p_h, t_q)
    inner, outer = params
    output, _ = self_attention_forward(t_q.tokens, p_h.prototypes, inner, outer, counter)
    return output


def tokens_to_grid(tokens: np.ndarray, layout: Tuple[int, int, int]) -> np.ndarray:
    units, height, width = layout
    return tokens.reshape(units, height, width, tokens.shape[1]).transpose(0, 3, 1, 2)


def grid_to_tokens(grid: np.ndarray) -> np.ndarray:
    return grid.transpose(0, 2, 3, 1).reshape(-1, grid.shape[1])


def holistic_attention(a_co: np.ndarray, a_self: np.ndarray, layout: Tuple[int, int, int]) -> HolisticAttention:
    if a_co.shape != a_self.shape:
        raise AttentionShapeError(f"Co-attention {a_co.shape} and self-attention {a_self.shape} differ")
    units, height, width = layout
    if a_co.shape[0] != units * height * width:
        raise AttentionShapeError(f"{a_co.shape[0]} tokens do not match layout {tuple(layout)}")
    return HolisticAttention(np.concatenate([tokens_to_grid(a_co, layout), tokens_to_grid(a_self, layout)], axis=1))


def holistic_backward(grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Split a T x 2C x H x W gradient back into co- and self-attention token gradients."""
    channels = grad.shape[1] // 2
    return grid_to_tokens(grad[:, :channels]), grid_to_tokens(grad[:, channels:])
