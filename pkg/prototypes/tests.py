import itertools
import tempfile

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from episodes.models import FeatureMap, Mask
from verify.gradients import finite_diff_grad, relative_error
from verify.oracles import dense_graph_attention

from .clustering import (
    QUERY_STREAM,
    cluster_query_prototypes,
    cluster_support_prototypes,
    kmeans,
)
from .exceptions import ClusteringError, EmptyForegroundError, PrototypeShapeError
from .graph_attention import (
    enhance_backward,
    enhance_forward,
    enhance_prototypes,
    graph_attention,
    graph_attention_backward,
    graph_attention_forward,
)
from .models import GraphAttentionParams, ProjectionParams, PrototypeSet
from .projection import project_and_mask, project_backward, project_forward
from .pseudo_masks import compute_pseudo_masks, pseudo_mask_backward, pseudo_mask_forward
from .similarity import cosine_similarity, pairwise_cosine, pairwise_cosine_backward
from .storage import load_prototypes, save_prototypes

GRAD_TOLERANCE = 1e-3


def l4_map(rows, height, width):
    return FeatureMap.from_rows('l4', np.asarray(rows, dtype=np.float64), height, width)


class CosineTests(SimpleTestCase):
    def test_examples(self):
        self.assertAlmostEqual(cosine_similarity([3, 4], [3, 4]), 1.0, places=6)
        self.assertEqual(cosine_similarity([1, 0], [0, 1]), 0.0)
        self.assertAlmostEqual(cosine_similarity([1, 2], [2, 1]), 0.8, places=6)
        self.assertEqual(cosine_similarity([0, 0], [1, 1]), 0.0)

    def test_pairwise_gradient(self):
        rng = np.random.default_rng(0)
        a, b, g = rng.standard_normal((3, 4)), rng.standard_normal((5, 4)), rng.standard_normal((3, 5))
        _, cache = pairwise_cosine(a, b)
        grad_a, grad_b = pairwise_cosine_backward(g, cache)
        self.assertLess(relative_error(grad_a, finite_diff_grad(lambda x: np.sum(pairwise_cosine(x, b)[0] * g), a)),
                        GRAD_TOLERANCE)
        self.assertLess(relative_error(grad_b, finite_diff_grad(lambda x: np.sum(pairwise_cosine(a, x)[0] * g), b)),
                        GRAD_TOLERANCE)


class PseudoMaskTests(SimpleTestCase):
    def test_matching_pixel_lights_up(self):
        eye = np.eye(4)
        support = [l4_map(eye[:1], 1, 1)]
        query = [l4_map(eye, 2, 2)]
        masks = compute_pseudo_masks(query, support, [Mask(np.ones((1, 1)))])
        assert_allclose(masks[0].data, [[1.0, 0.0], [0.0, 0.0]], atol=1e-6)

    def test_identical_query_pixels_are_degenerate(self):
        query = [l4_map(np.ones((4, 3)), 2, 2)]
        support = [l4_map(np.random.default_rng(1).standard_normal((4, 3)), 2, 2)]
        with self.assertLogs('prototypes.pseudo_masks', level='WARNING'):
            masks = compute_pseudo_masks(query, support, [Mask(np.ones((2, 2)))])
        assert_array_equal(masks[0].data, np.zeros((2, 2)))

    def test_background_support_pixel_has_no_influence(self):
        rng = np.random.default_rng(2)
        support_rows = rng.standard_normal((4, 5))
        query = [l4_map(rng.standard_normal((4, 5)), 2, 2)]
        mask = Mask(np.array([[1.0, 1.0], [0.0, 1.0]]))
        before = compute_pseudo_masks(query, [l4_map(support_rows, 2, 2)], [mask])
        support_rows[2] = 100.0 * rng.standard_normal(5)
        after = compute_pseudo_masks(query, [l4_map(support_rows, 2, 2)], [mask])
        self.assertEqual(before, after)

    def test_empty_support_mask(self):
        rows = np.random.default_rng(3).standard_normal((4, 3))
        with self.assertRaises(EmptyForegroundError) as ctx:
            compute_pseudo_masks([l4_map(rows, 2, 2)], [l4_map(rows, 2, 2), l4_map(rows, 2, 2)],
                                 [Mask(np.ones((2, 2))), Mask(np.zeros((2, 2)))])
        self.assertEqual(ctx.exception.index, 1)

    def test_mask_dims_must_match_l4(self):
        rows = np.ones((4, 3))
        with self.assertRaises(PrototypeShapeError):
            compute_pseudo_masks([l4_map(rows, 2, 2)], [l4_map(rows, 2, 2)], [Mask(np.ones((4, 4)))])

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3))
    def test_range_and_scale_invariance(self, seed, k, t):
        rng = np.random.default_rng(seed)
        support = [rng.standard_normal((6, 4)) for _ in range(k)]
        weights = [np.ones(6) for _ in range(k)]
        query = rng.standard_normal((t, 6, 4))
        masks, _ = pseudo_mask_forward(query, support, weights)
        self.assertGreaterEqual(masks.min(), 0.0)
        self.assertLessEqual(masks.max(), 1.0)
        for frame in masks:
            self.assertEqual((frame.min(), frame.max()), (0.0, 1.0))
        scaled = [rows * rng.uniform(0.5, 3.0, size=(6, 1)) for rows in support]
        rescaled, _ = pseudo_mask_forward(query, scaled, weights)
        assert_allclose(rescaled, masks, atol=1e-6)

    def test_gradient(self):
        rng = np.random.default_rng(4)
        support = [rng.standard_normal((4, 3)), rng.standard_normal((4, 3))]
        weights = [np.array([1.0, 0.0, 1.0, 1.0]), np.array([0.0, 1.0, 1.0, 0.0])]
        query = rng.standard_normal((2, 5, 3))
        g = rng.standard_normal((2, 5))
        _, cache = pseudo_mask_forward(query, support, weights)
        grad_query, grad_support = pseudo_mask_backward(g, cache)

        numeric_query = finite_diff_grad(lambda x: np.sum(pseudo_mask_forward(x, support, weights)[0] * g), query)
        self.assertLess(relative_error(grad_query, numeric_query), GRAD_TOLERANCE)
        numeric_support = finite_diff_grad(
            lambda x: np.sum(pseudo_mask_forward(query, [x, support[1]], weights)[0] * g), support[0])
        self.assertLess(relative_error(grad_support[0], numeric_support), GRAD_TOLERANCE)


class ProjectionTests(SimpleTestCase):
    def test_zero_mask_annihilates(self):
        features = FeatureMap('l3', np.random.default_rng(0).standard_normal((3, 2, 2)))
        params = ProjectionParams.initialize(3, 4, np.random.default_rng(1))
        out = project_and_mask(features, Mask(np.zeros((2, 2))), params)
        assert_array_equal(out.data, np.zeros((4, 2, 2)))

    def test_identity(self):
        features = FeatureMap('l3', np.random.default_rng(0).standard_normal((3, 2, 2)))
        out = project_and_mask(features, Mask(np.ones((2, 2))), ProjectionParams.identity(3))
        self.assertEqual(out, features)

    def test_matches_dense_arithmetic(self):
        rng = np.random.default_rng(5)
        data = rng.standard_normal((3, 2, 2))
        mask = rng.uniform(size=(2, 2))
        params = ProjectionParams(rng.standard_normal((4, 3)), rng.standard_normal(4))
        out = project_and_mask(FeatureMap('l3', data), Mask(mask), params)
        stored = FeatureMap('l3', data).data.astype(np.float64)
        stored_mask = Mask(mask).values()
        for h, w in itertools.product(range(2), range(2)):
            expected = (params.weight @ stored[:, h, w] + params.bias) * stored_mask[h, w]
            assert_allclose(out.data[:, h, w], expected, rtol=1e-6, atol=1e-6)

    def test_dim_mismatch(self):
        with self.assertRaises(PrototypeShapeError):
            project_and_mask(FeatureMap('l3', np.zeros((3, 2, 2))), Mask(np.ones((2, 3))),
                             ProjectionParams.identity(3))

    def test_gradient(self):
        rng = np.random.default_rng(6)
        rows, weights = rng.standard_normal((5, 3)), rng.uniform(size=5)
        params = ProjectionParams(rng.standard_normal((2, 3)), rng.standard_normal(2))
        g = rng.standard_normal((5, 2))
        grads = project_backward(g, project_forward(rows, weights, params)[1])

        def loss_weight(w):
            return np.sum(project_forward(rows, weights, ProjectionParams(w, params.bias))[0] * g)

        self.assertLess(relative_error(grads['weight'], finite_diff_grad(loss_weight, params.weight)),
                        GRAD_TOLERANCE)
        self.assertLess(relative_error(
            grads['rows'], finite_diff_grad(lambda x: np.sum(project_forward(x, weights, params)[0] * g), rows)),
            GRAD_TOLERANCE)
        self.assertLess(relative_error(
            grads['weights'], finite_diff_grad(lambda x: np.sum(project_forward(rows, x, params)[0] * g), weights)),
            GRAD_TOLERANCE)


class KMeansTests(SimpleTestCase):
    def test_separated_clusters(self):
        points = np.array([[0.0, 0.0]] * 5 + [[10.0, 10.0]] * 5)
        result = kmeans(points, 2, seed=0)
        centroids = sorted(map(tuple, result.centroids))
        self.assertEqual(centroids, [(0.0, 0.0), (10.0, 10.0)])
        self.assertFalse(result.duplicated)

    def test_identical_points_duplicate(self):
        result = kmeans(np.ones((4, 3)), 2, seed=1)
        assert_array_equal(result.centroids, np.ones((2, 3)))
        self.assertTrue(result.duplicated)

    def test_deterministic(self):
        points = np.random.default_rng(7).standard_normal((30, 3))
        assert_array_equal(kmeans(points, 4, seed=9).centroids, kmeans(points, 4, seed=9).centroids)

    def test_objective_not_above_any_point_pair(self):
        for seed in range(5):
            points = np.random.default_rng(100 + seed).standard_normal((8, 2))
            result = kmeans(points, 2, seed=seed)
            for i, j in itertools.combinations(range(8), 2):
                pair = points[[i, j]]
                objective = np.min(((points[:, None, :] - pair[None]) ** 2).sum(axis=2), axis=1).sum()
                self.assertLessEqual(result.objective, objective + 1e-9)

    def test_objective_history_is_non_increasing(self):
        result = kmeans(np.random.default_rng(8).standard_normal((60, 4)), 5, seed=3)
        self.assertTrue(all(b <= a + 1e-9 for a, b in zip(result.history, result.history[1:])))

    def test_invalid_arguments(self):
        with self.assertRaises(ClusteringError):
            kmeans(np.ones((3, 2)), 0, seed=0)
        with self.assertRaises(ClusteringError):
            kmeans(np.zeros((0, 2)), 2, seed=0)


class ClusterPrototypeTests(SimpleTestCase):
    def _maps(self, rng, count, channels=4, shape=(3, 4)):
        return [FeatureMap('l3', rng.standard_normal((channels,) + shape)) for _ in range(count)]

    def test_single_prototype_is_foreground_mean(self):
        rng = np.random.default_rng(0)
        feats = self._maps(rng, 1)
        mask = np.zeros((3, 4))
        mask[1:, 1:3] = 1.0
        result = cluster_support_prototypes(feats, 1, seed=0, masks=[Mask(mask)])
        expected = feats[0].rows()[mask.ravel() != 0].mean(axis=0)
        assert_allclose(result.prototypes[0], expected, atol=1e-12)
        self.assertEqual(result.origin, 'support_raw')

    def test_support_shape(self):
        rng = np.random.default_rng(1)
        result = cluster_support_prototypes(self._maps(rng, 2), 5, seed=0,
                                            masks=[Mask(np.ones((3, 4)))] * 2)
        self.assertEqual(result.prototypes.shape, (10, 4))
        self.assertEqual(result.units, 2)

    def test_few_identical_vectors_duplicate(self):
        data = np.zeros((4, 3, 4))
        data[:, 0, :3] = np.array([1.0, 2.0, 3.0, 4.0])[:, None]
        result = cluster_support_prototypes([FeatureMap('l3', data)], 5, seed=0)
        self.assertEqual(result.size, 5)
        self.assertTrue(result.duplicated)

    def test_support_image_without_foreground(self):
        rng = np.random.default_rng(2)
        with self.assertRaises(EmptyForegroundError) as ctx:
            cluster_support_prototypes(self._maps(rng, 2), 2, seed=0,
                                       masks=[Mask(np.ones((3, 4))), Mask(np.zeros((3, 4)))])
        self.assertEqual(ctx.exception.index, 1)

    def test_query_shape(self):
        rng = np.random.default_rng(3)
        feats = self._maps(rng, 5, shape=(6, 6))
        result = cluster_query_prototypes(feats, 5, seed=0, masks=[Mask(np.ones((6, 6)))] * 5)
        self.assertEqual(result.prototypes.shape, (25, 4))
        self.assertEqual(result.origin, 'query_raw')

    def test_identical_frames_pool_like_replicated_frame(self):
        rng = np.random.default_rng(4)
        frame = self._maps(rng, 1)[0]
        weights = rng.uniform(size=(3, 4))
        mask = Mask(weights)
        result = cluster_query_prototypes([frame] * 3, 2, seed=5, masks=[mask] * 3)
        selected = frame.rows()[mask.values().ravel() >= 0.5]
        expected = kmeans(np.tile(selected, (3, 1)), 6, seed=[5, QUERY_STREAM])
        assert_array_equal(result.prototypes, expected.centroids)

    def test_single_pixel_per_frame_duplicates(self):
        rng = np.random.default_rng(5)
        mask = np.full((3, 4), 0.3)
        mask[1, 2] = 1.0
        result = cluster_query_prototypes(self._maps(rng, 2), 3, seed=0, masks=[Mask(mask)] * 2, tau_fg=1.0)
        self.assertEqual(result.size, 6)
        self.assertTrue(result.duplicated)

    def test_no_query_foreground(self):
        rng = np.random.default_rng(6)
        with self.assertRaises(EmptyForegroundError):
            cluster_query_prototypes(self._maps(rng, 2), 2, seed=0, masks=[Mask(np.full((3, 4), 0.2))] * 2)


class GraphAttentionTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(10)

    def _set(self, rows, origin='support_raw', n_per_unit=1):
        return PrototypeSet(rows, origin=origin, n_per_unit=n_per_unit)

    def test_zero_lambda_is_linear_map(self):
        params = GraphAttentionParams.initialize(4, self.rng)
        target, source = self.rng.standard_normal((3, 4)), self.rng.standard_normal((5, 4))
        out = graph_attention(self._set(target), self._set(source), 0.0, params)
        assert_array_equal(out.prototypes, target @ params.w_q.T)

    def test_single_prototype(self):
        p = np.array([[1.0, -2.0, 0.5]])
        out = graph_attention(self._set(p), self._set(p), 0.8, GraphAttentionParams.identity(3))
        assert_allclose(out.prototypes, p + 0.8 * p, rtol=1e-6)

    def test_matches_dense_oracle(self):
        params = GraphAttentionParams.initialize(2, self.rng)
        target, source = self.rng.standard_normal((3, 2)), self.rng.standard_normal((3, 2))
        out = graph_attention(self._set(target), self._set(source), 0.2, params)
        oracle = dense_graph_attention(target, source, 0.2, params.w_k, params.w_q, params.w_v)
        assert_allclose(out.prototypes, oracle, atol=1e-6)

    def test_output_follows_target_size(self):
        params = GraphAttentionParams.initialize(4, self.rng)
        out, _ = graph_attention_forward(self.rng.standard_normal((2, 4)), self.rng.standard_normal((7, 4)),
                                         0.5, params)
        self.assertEqual(out.shape, (2, 4))

    def test_row_weights_sum_to_one_for_positive_similarity(self):
        params = GraphAttentionParams.identity(3)
        target = self.rng.uniform(0.1, 1.0, size=(4, 3))
        source = self.rng.uniform(0.1, 1.0, size=(2, 3))
        _, cache = graph_attention_forward(target, source, 0.5, params)
        weights = cache[8]
        assert_allclose(weights.sum(axis=1), np.ones(2), atol=1e-7)

    def test_literal_value_switch(self):
        params = GraphAttentionParams.initialize(3, self.rng)
        target, source = self.rng.standard_normal((2, 3)), self.rng.standard_normal((2, 3))
        literal, _ = graph_attention_forward(target, source, 0.5, params, value_from='target')
        repaired, _ = graph_attention_forward(target, source, 0.5, params)
        self.assertFalse(np.allclose(literal, repaired))
        with self.assertRaises(PrototypeShapeError):
            graph_attention_forward(target, source[:1], 0.5, params, value_from='target')

    def test_channel_mismatch(self):
        with self.assertRaises(PrototypeShapeError):
            graph_attention_forward(np.ones((2, 3)), np.ones((2, 4)), 0.5, GraphAttentionParams.identity(3))

    def test_gradients(self):
        params = GraphAttentionParams.initialize(3, self.rng)
        target, source = self.rng.standard_normal((4, 3)), self.rng.standard_normal((2, 3))
        g = self.rng.standard_normal((4, 3))
        grads = graph_attention_backward(g, graph_attention_forward(target, source, 0.7, params)[1])

        def loss(w_k=params.w_k, w_q=params.w_q, w_v=params.w_v, tgt=target, src=source):
            out, _ = graph_attention_forward(tgt, src, 0.7, GraphAttentionParams(w_k, w_q, w_v))
            return np.sum(out * g)

        for name in ('w_k', 'w_q', 'w_v'):
            numeric = finite_diff_grad(lambda x: loss(**{name: x}), getattr(params, name))
            self.assertLess(relative_error(grads[name], numeric), GRAD_TOLERANCE, name)
        self.assertLess(relative_error(grads['target'], finite_diff_grad(lambda x: loss(tgt=x), target)),
                        GRAD_TOLERANCE)
        self.assertLess(relative_error(grads['source'], finite_diff_grad(lambda x: loss(src=x), source)),
                        GRAD_TOLERANCE)


class EnhancePrototypeTests(SimpleTestCase):
    def test_identity_cascade(self):
        rng = np.random.default_rng(11)
        blocks = [GraphAttentionParams.identity(4, lambda_self=0.0, lambda_co=0.0)] * 3
        p_s = PrototypeSet(rng.standard_normal((6, 4)), 'support_raw', 3)
        p_q = PrototypeSet(rng.standard_normal((9, 4)), 'query_raw', 3)
        holistic = enhance_prototypes(p_s, p_q, blocks)
        assert_array_equal(holistic.prototypes, p_s.prototypes)
        self.assertEqual(holistic.origin, 'holistic')

    def test_shapes(self):
        rng = np.random.default_rng(12)
        blocks = [GraphAttentionParams.initialize(256, rng) for _ in range(3)]
        p_s = PrototypeSet(rng.standard_normal((25, 256)), 'support_raw', 5)
        p_q = PrototypeSet(rng.standard_normal((25, 256)), 'query_raw', 5)
        self.assertEqual(enhance_prototypes(p_s, p_q, blocks).prototypes.shape, (25, 256))

    def test_matches_composed_oracle(self):
        rng = np.random.default_rng(13)
        blocks = [GraphAttentionParams.initialize(3, rng) for _ in range(3)]
        support, query = rng.standard_normal((4, 3)), rng.standard_normal((6, 3))
        holistic = enhance_prototypes(PrototypeSet(support, 'support_raw', 2),
                                      PrototypeSet(query, 'query_raw', 2), blocks)
        s_bar = dense_graph_attention(support, support, 0.8, blocks[0].w_k, blocks[0].w_q, blocks[0].w_v)
        q_bar = dense_graph_attention(query, query, 0.8, blocks[1].w_k, blocks[1].w_q, blocks[1].w_v)
        oracle = dense_graph_attention(s_bar, q_bar, 0.2, blocks[2].w_k, blocks[2].w_q, blocks[2].w_v)
        assert_allclose(holistic.prototypes, oracle, atol=1e-6)

    def test_requires_raw_sets(self):
        rows = np.ones((2, 3))
        with self.assertRaises(PrototypeShapeError):
            enhance_prototypes(PrototypeSet(rows, 'holistic', 1), PrototypeSet(rows, 'query_raw', 1),
                               [GraphAttentionParams.identity(3)] * 3)

    def test_gradients(self):
        rng = np.random.default_rng(14)
        blocks = [GraphAttentionParams.initialize(3, rng) for _ in range(3)]
        support, query = rng.standard_normal((2, 3)), rng.standard_normal((4, 3))
        g = rng.standard_normal((2, 3))
        (_, _, _), cache = enhance_forward(support, query, blocks, 0.8, 0.2)
        grads = enhance_backward(g, cache)

        def loss(s=support, q=query):
            return np.sum(enhance_forward(s, q, blocks, 0.8, 0.2)[0][2] * g)

        self.assertLess(relative_error(grads['support'], finite_diff_grad(lambda x: loss(s=x), support)),
                        GRAD_TOLERANCE)
        self.assertLess(relative_error(grads['query'], finite_diff_grad(lambda x: loss(q=x), query)),
                        GRAD_TOLERANCE)

        def loss_block(index, name, value):
            changed = list(blocks)
            fields = {n: getattr(blocks[index], n) for n in ('w_k', 'w_q', 'w_v')}
            fields[name] = value
            changed[index] = GraphAttentionParams(**fields)
            return np.sum(enhance_forward(support, query, changed, 0.8, 0.2)[0][2] * g)

        for index, group in enumerate(('support_self', 'query_self', 'co')):
            for name in ('w_k', 'w_q', 'w_v'):
                numeric = finite_diff_grad(lambda x: loss_block(index, name, x), getattr(blocks[index], name))
                self.assertLess(relative_error(grads[group][name], numeric), GRAD_TOLERANCE, f'{group}.{name}')


class PrototypeStorageTests(SimpleTestCase):
    def test_round_trip(self):
        rng = np.random.default_rng(15)
        sets = [PrototypeSet(rng.standard_normal((4, 3)), 'support_raw', 2),
                PrototypeSet(rng.standard_normal((6, 3)), 'query_raw', 2, duplicated=True)]
        with tempfile.TemporaryDirectory() as tmp:
            save_prototypes(sets, tmp)
            loaded = load_prototypes(tmp)
        self.assertEqual(set(loaded), {'support_raw', 'query_raw'})
        assert_allclose(loaded['support_raw'].prototypes, sets[0].prototypes, rtol=1e-6)
        self.assertTrue(loaded['query_raw'].duplicated)
