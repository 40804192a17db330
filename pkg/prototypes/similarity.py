import numpy as np

EPSILON = 1e-8


def cosine_similarity(s, t) -> float:
    """<s, t> / (|s| |t| + eps); zero vectors give 0."""
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return float(s @ t / (np.linalg.norm(s) * np.linalg.norm(t) + EPSILON))


def pairwise_cosine(a: np.ndarray, b: np.ndarray):
    """Cosine similarity of every row of ``a`` against every row of ``b``.

    Returns the (len(a) x len(b)) matrix and the cache for
    :func:`pairwise_cosine_backward`.
    """
    norm_a = np.linalg.norm(a, axis=1)
    norm_b = np.linalg.norm(b, axis=1)
    numerator = a @ b.T
    denominator = np.outer(norm_a, norm_b) + EPSILON
    return numerator / denominator, (a, b, norm_a, norm_b, numerator, denominator)


def pairwise_cosine_backward(grad: np.ndarray, cache):
    a, b, norm_a, norm_b, numerator, denominator = cache
    grad_numerator = grad / denominator
    grad_denominator = -grad * numerator / denominator ** 2
    grad_norm_a = grad_denominator @ norm_b
    grad_norm_b = grad_denominator.T @ norm_a

    scale_a = np.divide(grad_norm_a, norm_a, out=np.zeros_like(norm_a), where=norm_a > 0)
    scale_b = np.divide(grad_norm_b, norm_b, out=np.zeros_like(norm_b), where=norm_b > 0)
    grad_a = grad_numerator @ b + scale_a[:, None] * a
    grad_b = grad_numerator.T @ a + scale_b[:, None] * b
    return grad_a, grad_b
