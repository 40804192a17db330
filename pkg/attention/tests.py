import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from prototypes.models import PrototypeSet
from verify.gradients import finite_diff_grad, relative_error
from verify.models import CostCounter, attention_macs
from verify.oracles import dense_attention

from .blocks import (
    attention,
    attention_backward,
    attention_forward,
    co_attention_backward,
    co_attention_forward,
    holistic_attention,
    holistic_backward,
    prototype_co_attention,
    prototype_self_attention,
    self_attention_backward,
    self_attention_forward,
)
from .exceptions import AttentionShapeError
from .models import AttentionBlockParams, TokenMatrix

GRAD_TOLERANCE = 1e-3


def tokens(rng, units, height, width, channels, provenance='query'):
    return TokenMatrix(rng.standard_normal((units * height * width, channels)), provenance, (units, height, width))


class AttentionTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_single_key(self):
        params = AttentionBlockParams.initialize(3, self.rng)
        q, kv = self.rng.standard_normal((4, 3)), self.rng.standard_normal((1, 3))
        out = attention(q, kv, kv, params)
        assert_allclose(out, q @ params.w_q.T + kv @ params.w_v.T, atol=1e-12)

    def test_saturated_softmax(self):
        one_hot = 100.0 * np.eye(3)
        out = attention(one_hot, one_hot, one_hot, AttentionBlockParams.identity(3))
        assert_allclose(out, 2 * one_hot, atol=1e-4)

    def test_matches_dense_oracle(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            params = AttentionBlockParams.initialize(3, rng)
            q, k, v = rng.standard_normal((4, 3)), rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
            assert_allclose(attention(q, k, v, params), dense_attention(q, k, v, params), rtol=1e-6, atol=1e-9)

    def test_shape_mismatch(self):
        params = AttentionBlockParams.identity(3)
        with self.assertRaises(AttentionShapeError):
            attention(np.ones((2, 3)), np.ones((4, 3)), np.ones((3, 3)), params)
        with self.assertRaises(AttentionShapeError):
            attention(np.ones((2, 4)), np.ones((4, 3)), np.ones((4, 3)), params)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_permutations(self, seed):
        rng = np.random.default_rng(seed)
        params = AttentionBlockParams.initialize(4, rng)
        q, k, v = rng.standard_normal((5, 4)), rng.standard_normal((6, 4)), rng.standard_normal((6, 4))
        base = attention(q, k, v, params)
        kv_order = rng.permutation(6)
        assert_allclose(attention(q, k[kv_order], v[kv_order], params), base, atol=1e-12)
        q_order = rng.permutation(5)
        assert_allclose(attention(q[q_order], k, v, params), base[q_order], atol=1e-12)

    def test_counter(self):
        counter = CostCounter()
        attention(np.ones((4, 2)), np.ones((3, 2)), np.ones((3, 2)), AttentionBlockParams.identity(2), counter)
        self.assertEqual(counter.mac_count, 2 * 2 * (4 + 2 * 3) + 2 * 4 * 3 * 2 + 4 * 3)

    def test_gradients(self):
        params = AttentionBlockParams.initialize(3, self.rng)
        q, k, v = self.rng.standard_normal((4, 3)), self.rng.standard_normal((5, 3)), self.rng.standard_normal((5, 3))
        g = self.rng.standard_normal((4, 3))
        grads = attention_backward(g, attention_forward(q, k, v, params)[1])
        fields = {'w_q': params.w_q, 'w_k': params.w_k, 'w_v': params.w_v}
        inputs = {'queries': q, 'keys': k, 'values': v}

        def loss(**changes):
            block = AttentionBlockParams(**{n: changes.get(n, fields[n]) for n in fields})
            args = [changes.get(n, inputs[n]) for n in ('queries', 'keys', 'values')]
            return np.sum(attention_forward(*args, block)[0] * g)

        for name, value in {**fields, **inputs}.items():
            numeric = finite_diff_grad(lambda x: loss(**{name: x}), value)
            self.assertLess(relative_error(grads[name], numeric), GRAD_TOLERANCE, name)


class PrototypeAttentionTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_default_shapes(self):
        channels = 256
        t_q = tokens(self.rng, 5, 16, 28, channels)
        t_s = tokens(self.rng, 5, 16, 28, channels, 'support')
        p_h = PrototypeSet(self.rng.standard_normal((25, channels)), 'holistic', 5)
        inner, outer = AttentionBlockParams.initialize(channels, self.rng), AttentionBlockParams.initialize(channels, self.rng)
        self.assertEqual(attention(p_h.prototypes, t_s.tokens, t_s.tokens, inner).shape, (25, 256))
        counter = CostCounter()
        co = prototype_co_attention(t_q, t_s, p_h, (inner, outer), counter)
        self.assertEqual(co.shape, (2240, 256))
        self.assertEqual(prototype_self_attention(t_q, p_h, (inner, outer)).shape, (2240, 256))
        self.assertLess(counter.attention_macs * 10, attention_macs(2240, 2240, 256))

    def test_one_prototype_one_support_token(self):
        p = np.array([[0.5, -1.0]])
        s = np.array([[2.0, 1.0]])
        q = self.rng.standard_normal((3, 2))
        t_q = TokenMatrix(q, 'query', (3, 1, 1))
        t_s = TokenMatrix(s, 'support', (1, 1, 1))
        blocks = (AttentionBlockParams.identity(2), AttentionBlockParams.identity(2))
        out = prototype_co_attention(t_q, t_s, PrototypeSet(p, 'holistic', 1), blocks)
        assert_allclose(out, q + (p + s), atol=1e-12)

    def test_matches_composed_oracle(self):
        inner, outer = AttentionBlockParams.initialize(3, self.rng), AttentionBlockParams.initialize(3, self.rng)
        t_q, t_s = tokens(self.rng, 2, 2, 3, 3), tokens(self.rng, 3, 2, 3, 3, 'support')
        p_h = PrototypeSet(self.rng.standard_normal((6, 3)), 'holistic', 2)
        oracle = dense_attention(t_q.tokens, p_h.prototypes,
                                 dense_attention(p_h.prototypes, t_s.tokens, t_s.tokens, inner), outer)
        assert_allclose(prototype_co_attention(t_q, t_s, p_h, (inner, outer)), oracle, rtol=1e-6, atol=1e-9)
        self_oracle = dense_attention(t_q.tokens, p_h.prototypes,
                                      dense_attention(p_h.prototypes, t_q.tokens, t_q.tokens, inner), outer)
        assert_allclose(prototype_self_attention(t_q, p_h, (inner, outer)), self_oracle, rtol=1e-6, atol=1e-9)

    def test_self_is_co_with_query_as_support(self):
        blocks = (AttentionBlockParams.initialize(4, self.rng), AttentionBlockParams.initialize(4, self.rng))
        t_q = tokens(self.rng, 3, 2, 2, 4)
        as_support = TokenMatrix(t_q.tokens, 'support', t_q.layout)
        p_h = PrototypeSet(self.rng.standard_normal((6, 4)), 'holistic', 2)
        assert_array_equal(prototype_self_attention(t_q, p_h, blocks),
                           prototype_co_attention(t_q, as_support, p_h, blocks))

    def test_requires_holistic_prototypes(self):
        t_q = tokens(self.rng, 1, 2, 2, 3)
        with self.assertRaises(AttentionShapeError):
            prototype_self_attention(t_q, PrototypeSet(np.ones((2, 3)), 'query_raw', 1),
                                     (AttentionBlockParams.identity(3),) * 2)

    def test_co_and_self_gradients(self):
        inner, outer = AttentionBlockParams.initialize(3, self.rng), AttentionBlockParams.initialize(3, self.rng)
        query, support = self.rng.standard_normal((6, 3)), self.rng.standard_normal((4, 3))
        protos = self.rng.standard_normal((2, 3))
        g = self.rng.standard_normal((6, 3))

        co = co_attention_backward(g, co_attention_forward(query, support, protos, inner, outer)[1])
        self.assertLess(relative_error(co['support'], finite_diff_grad(
            lambda x: np.sum(co_attention_forward(query, x, protos, inner, outer)[0] * g), support)), GRAD_TOLERANCE)
        self.assertLess(relative_error(co['prototypes'], finite_diff_grad(
            lambda x: np.sum(co_attention_forward(query, support, x, inner, outer)[0] * g), protos)), GRAD_TOLERANCE)
        self.assertLess(relative_error(co['inner']['w_k'], finite_diff_grad(
            lambda x: np.sum(co_attention_forward(
                query, support, protos, AttentionBlockParams(inner.w_q, x, inner.w_v), outer)[0] * g), inner.w_k)),
            GRAD_TOLERANCE)

        own = self_attention_backward(g, self_attention_forward(query, protos, inner, outer)[1])
        self.assertLess(relative_error(own['query'], finite_diff_grad(
            lambda x: np.sum(self_attention_forward(x, protos, inner, outer)[0] * g), query)), GRAD_TOLERANCE)
        self.assertLess(relative_error(own['outer']['w_v'], finite_diff_grad(
            lambda x: np.sum(self_attention_forward(
                query, protos, inner, AttentionBlockParams(outer.w_q, outer.w_k, x))[0] * g), outer.w_v)),
            GRAD_TOLERANCE)


class HolisticAttentionTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(2)
        self.layout = (2, 3, 4)
        self.a_co = rng.standard_normal((24, 5))
        self.a_self = rng.standard_normal((24, 5))

    def test_co_attention_comes_first(self):
        holistic = holistic_attention(self.a_co, self.a_self, self.layout)
        expected = self.a_co.reshape(2, 3, 4, 5).transpose(0, 3, 1, 2)
        assert_array_equal(holistic.data[:, :5], expected)
        assert_array_equal(holistic.co_attention, expected)

    def test_default_shape(self):
        a = np.zeros((5 * 16 * 28, 256))
        self.assertEqual(holistic_attention(a, a, (5, 16, 28)).data.shape, (5, 512, 16, 28))

    def test_swapping_inputs_swaps_halves(self):
        first = holistic_attention(self.a_co, self.a_self, self.layout)
        second = holistic_attention(self.a_self, self.a_co, self.layout)
        assert_array_equal(first.co_attention, second.self_attention)
        assert_array_equal(first.self_attention, second.co_attention)

    def test_backward_splits_halves(self):
        holistic = holistic_attention(self.a_co, self.a_self, self.layout)
        g_co, g_self = holistic_backward(holistic.data)
        assert_array_equal(g_co, self.a_co)
        assert_array_equal(g_self, self.a_self)

    def test_shape_mismatch(self):
        with self.assertRaises(AttentionShapeError):
            holistic_attention(self.a_co, self.a_self[:-1], self.layout)
