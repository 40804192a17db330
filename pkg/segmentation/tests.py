import math
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
from django.test import SimpleTestCase, tag
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from attention.models import HolisticAttention
from episodes.models import Mask, SynthConfig
from episodes.synthesis import synth_episode
from prototypes.models import PrototypeSet
from verify.gradients import finite_diff_grad, relative_error

from .exceptions import LossDomainError, LossShapeError, NonFiniteLossError
from .head import decode, decode_backward, decode_forward
from .losses import (
    ce_backward,
    ce_forward,
    ce_loss,
    iou_backward,
    iou_forward,
    iou_loss,
    proto_backward,
    proto_forward,
    proto_loss,
    total_loss,
)
from .models import HeadParams, LossReport, LossWeights
from .network import ModelParams, NetworkOptions, network_backward, network_forward, prepare_inputs
from .training import loss_reduction, train_demo

GRAD_TOLERANCE = 1e-3
TRAIN_CONFIG = SynthConfig(k_shots=2, t_frames=2, channels=16, l3_height=8, l3_width=12,
                           image_height=16, image_width=24, blob_radius=5, n_distractors=3)


def masks(*arrays):
    return [Mask(np.asarray(a, dtype=np.float64)) for a in arrays]


class DecodeTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.holistic = HolisticAttention(self.rng.standard_normal((2, 6, 3, 4)))

    def test_zero_params_give_one_half(self):
        out = decode(self.holistic, HeadParams(np.zeros(6), 0.0), 6, 8)
        for frame in out:
            assert_allclose(frame.data, 0.5)

    def test_saturated_bias(self):
        out = decode(self.holistic, HeadParams(np.zeros(6), 50.0), 3, 4)
        self.assertGreaterEqual(min(frame.data.min() for frame in out), 1 - 1e-9)

    def test_matches_per_pixel_recomputation(self):
        params = HeadParams(self.rng.standard_normal(6), 0.3)
        out, _ = decode_forward(self.holistic.data, params, 3, 4)
        for t, h, w in np.ndindex(2, 3, 4):
            logit = sum(params.proj[c] * self.holistic.data[t, c, h, w] for c in range(6)) + 0.3
            self.assertAlmostEqual(out[t, h, w], 1.0 / (1.0 + math.exp(-logit)), places=10)

    def test_output_smaller_than_grid(self):
        with self.assertRaises(LossShapeError):
            decode(self.holistic, HeadParams(np.zeros(6)), 2, 4)

    def test_gradient(self):
        params = HeadParams(self.rng.standard_normal(6), -0.2)
        g = self.rng.standard_normal((2, 6, 8))
        grads = decode_backward(g, decode_forward(self.holistic.data, params, 6, 8)[1])
        numeric = finite_diff_grad(lambda x: np.sum(decode_forward(self.holistic.data, HeadParams(x, -0.2), 6, 8)[0] * g),
                                   params.proj)
        self.assertLess(relative_error(grads['proj'], numeric), GRAD_TOLERANCE)
        numeric = finite_diff_grad(lambda x: np.sum(decode_forward(x, params, 6, 8)[0] * g), self.holistic.data)
        self.assertLess(relative_error(grads['holistic'], numeric), GRAD_TOLERANCE)
        numeric = finite_diff_grad(
            lambda x: np.sum(decode_forward(self.holistic.data, HeadParams(params.proj, x[0]), 6, 8)[0] * g),
            np.array([params.bias]))
        self.assertLess(relative_error(grads['bias'], numeric[0]), GRAD_TOLERANCE)


class LossTests(SimpleTestCase):
    def test_ce_examples(self):
        gt = np.array([[1.0, 0.0], [0.0, 1.0]])
        self.assertLessEqual(ce_loss(masks(gt), masks(gt)), 1e-6)
        self.assertAlmostEqual(ce_loss(masks(np.full((2, 2), 0.5)), masks(gt)), 0.693147, places=6)
        self.assertAlmostEqual(ce_loss(masks(1.0 - gt), masks(gt)), -math.log(1e-7), places=4)

    def test_iou_examples(self):
        gt = np.zeros((4, 4))
        gt[:, :2] = 1.0
        self.assertEqual(iou_loss(masks(gt), masks(gt)), 0.0)
        self.assertEqual(iou_loss(masks(1.0 - gt), masks(gt)), 1.0)
        self.assertAlmostEqual(iou_loss(masks(np.ones((4, 4))), masks(gt)), 0.5)

    def test_iou_empty_frame_counts_as_perfect(self):
        self.assertEqual(iou_loss(masks(np.zeros((2, 2))), masks(np.zeros((2, 2)))), 0.0)

    def test_proto_examples(self):
        same = PrototypeSet(np.tile([1.0, 2.0, 3.0], (4, 1)), 'holistic', 2)
        self.assertAlmostEqual(proto_loss(same, 1.0), 1.0, places=6)
        self.assertAlmostEqual(proto_loss(PrototypeSet(np.eye(3), 'holistic', 1), 1.0), 0.0)
        p = np.array([[1.0, -2.0]])
        self.assertAlmostEqual(proto_loss(PrototypeSet(np.vstack([p, -p]), 'holistic', 1), 1.0), -1.0, places=6)
        with self.assertRaises(LossDomainError):
            proto_forward(np.ones((1, 3)))

    def test_proto_decreases_as_prototypes_separate(self):
        previous = None
        for angle in np.linspace(0.0, np.pi, 7):
            rows = np.array([[1.0, 0.0], [np.cos(angle), np.sin(angle)]])
            value = proto_forward(rows)[0]
            if previous is not None:
                self.assertLess(value, previous)
            previous = value

    def test_total_examples(self):
        self.assertAlmostEqual(total_loss(0.693147, 0.5, 0.2, LossWeights(5, 1, 1)).total, 4.165735, places=9)
        self.assertEqual(total_loss(0.0, 0.0, 0.0).total, 0.0)
        self.assertEqual(total_loss(0.4, 0.3, 0.25, LossWeights(0, 0, 1)).total, 0.25)

    def test_shape_mismatch(self):
        with self.assertRaises(LossShapeError):
            ce_loss(masks(np.zeros((2, 2))), masks(np.zeros((2, 3))))
        with self.assertRaises(LossShapeError):
            iou_loss(masks(np.zeros((2, 2))), [])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_bounds(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.uniform(size=(3, 4, 5))
        gt = (rng.uniform(size=(3, 4, 5)) > 0.5).astype(np.float64)
        self.assertGreaterEqual(ce_forward(pred, gt)[0], 0.0)
        iou = iou_forward(pred, gt)[0]
        self.assertTrue(0.0 <= iou <= 1.0)
        lam = rng.uniform(0.0, 3.0)
        proto = proto_forward(rng.standard_normal((4, 6)), lam)[0]
        self.assertLessEqual(abs(proto), lam + 1e-9)

    def test_gradients(self):
        rng = np.random.default_rng(1)
        pred = rng.uniform(0.05, 0.95, size=(2, 3, 4))
        gt = (rng.uniform(size=(2, 3, 4)) > 0.5).astype(np.float64)
        self.assertLess(relative_error(ce_backward(ce_forward(pred, gt)[1]),
                                       finite_diff_grad(lambda x: ce_forward(x, gt)[0], pred)), GRAD_TOLERANCE)
        self.assertLess(relative_error(iou_backward(iou_forward(pred, gt)[1]),
                                       finite_diff_grad(lambda x: iou_forward(x, gt)[0], pred)), GRAD_TOLERANCE)
        protos = rng.standard_normal((5, 4))
        self.assertLess(relative_error(proto_backward(proto_forward(protos, 2.0)[1]),
                                       finite_diff_grad(lambda x: proto_forward(x, 2.0)[0], protos)), GRAD_TOLERANCE)

    def test_ce_gradient_is_zero_outside_clamp(self):
        pred = np.array([0.0, 1.0, 0.5])
        grad = ce_backward(ce_forward(pred, np.array([1.0, 0.0, 1.0]))[1])
        assert_array_equal(grad[:2], [0.0, 0.0])


class NetworkTests(SimpleTestCase):
    def setUp(self):
        self.episode = synth_episode(TRAIN_CONFIG, 3)
        self.inputs = prepare_inputs(self.episode)
        self.params = ModelParams.initialize(16, 16, np.random.default_rng(4))

    def test_forward_shapes(self):
        result = network_forward(self.inputs, self.params)
        self.assertEqual(result.probabilities.shape, (2, 16, 24))
        self.assertEqual(result.holistic.shape, (2, 32, 8, 12))
        self.assertEqual(result.prototypes['holistic'].prototypes.shape, (10, 16))
        self.assertEqual(result.prototypes['query_raw'].size, 10)
        report = result.report
        self.assertAlmostEqual(report.total, 5 * report.ce + report.iou + report.proto, places=9)

    def test_flat_parameter_round_trip(self):
        flat = self.params.to_dict()
        self.assertEqual(len([k for k in flat if k.startswith('graph.')]), 9)
        self.assertEqual(len([k for k in flat if k.startswith('attention.')]), 12)
        again = ModelParams.from_dict(flat).to_dict()
        for key, value in flat.items():
            assert_array_equal(again[key], value)

    def test_baseline_leaves_enhancement_and_self_attention_untouched(self):
        options = NetworkOptions(use_pgam=False, use_self_attention=False)
        result = network_forward(self.inputs, self.params, options)
        self.assertEqual(result.prototypes['holistic'].size, 10)
        self.assertNotIn('support_raw', result.prototypes)
        assert_array_equal(result.holistic[:, 16:], 0.0)
        grads = network_backward(result, self.params)
        for key, grad in grads.items():
            if key.startswith('graph.') or key.startswith('attention.self_'):
                self.assertFalse(grad.any(), key)
        self.assertTrue(grads['head.proj'].any())

    def test_end_to_end_gradient_with_frozen_prototypes(self):
        frozen = network_forward(self.inputs, self.params).prototypes
        frozen = {key: frozen[key] for key in ('support_raw', 'query_raw')}
        grads = network_backward(network_forward(self.inputs, self.params, frozen_prototypes=frozen), self.params)
        flat = self.params.to_dict()
        for key in ('projection.bias', 'graph.co.w_q', 'attention.self_outer.w_k', 'head.proj'):
            def loss(x, key=key):
                changed = dict(flat, **{key: x})
                result = network_forward(self.inputs, ModelParams.from_dict(changed), frozen_prototypes=frozen)
                return result.report.total
            self.assertLess(relative_error(grads[key], finite_diff_grad(loss, flat[key])), GRAD_TOLERANCE, key)


class TrainDemoTests(SimpleTestCase):
    def setUp(self):
        self.episodes = [synth_episode(TRAIN_CONFIG, seed) for seed in (1, 2)]

    def test_loss_reduction(self):
        reports = [LossReport(ce=0.0, iou=0.0, proto=0.0, total=total) for total in (4.0, 3.0, 1.0)]
        self.assertEqual(loss_reduction(reports), 0.75)
        self.assertEqual(loss_reduction([LossReport(0.0, 0.0, 0.0, 0.0)] * 2), 0.0)

    def test_grad_check_verdicts(self):
        report = LossReport(ce=0.1, iou=0.2, proto=0.3, total=1.0)
        self.assertEqual(report.grad_check, {})
        checked = report.with_grad_check({'head': 2e-4, 'projection': 5e-3}, 1e-3)
        self.assertEqual(checked.grad_check, {'head': (True, 2e-4), 'projection': (False, 5e-3)})
        self.assertEqual(checked.failed_groups, ['projection'])
        self.assertEqual(checked.total, report.total)

    def test_zero_learning_rate_is_constant(self):
        reports = train_demo(self.episodes, 3, lr=0.0, seed=5)
        self.assertEqual(len({r.total for r in reports}), 1)

    def test_deterministic(self):
        first = train_demo(self.episodes, 3, seed=6)
        second = train_demo(self.episodes, 3, seed=6, jobs=2)
        self.assertEqual([r.total for r in first], [r.total for r in second])

    def test_loss_goes_down(self):
        reports = train_demo(self.episodes, 30, seed=7)
        self.assertLess(reports[-1].total, reports[0].total)

    def test_trajectory_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'trajectory.csv'
            train_demo(self.episodes[:1], 2, seed=8, trajectory_path=path)
            lines = path.read_text().splitlines()
        self.assertEqual(lines[0], 'step,ce,iou,proto,total')
        self.assertEqual(len(lines), 3)
        self.assertTrue(lines[1].startswith('0,'))

    def test_non_finite_loss_aborts_with_step(self):
        nan_report = LossReport(ce=float('nan'), iou=0.0, proto=0.0, total=float('nan'))
        fake = mock.Mock(report=nan_report)
        with mock.patch('segmentation.training.network_forward', return_value=fake), \
                mock.patch('segmentation.training.network_backward', return_value={'head.bias': np.array(0.0)}):
            with self.assertRaises(NonFiniteLossError) as ctx:
                train_demo(self.episodes, 3)
        self.assertEqual(ctx.exception.step, 0)

    @tag('slow')
    def test_two_hundred_steps_halve_the_loss(self):
        cfg = SynthConfig(k_shots=2, t_frames=2, channels=64, l3_height=8, l3_width=12,
                          image_height=16, image_width=24, blob_radius=5, separation=10.0)
        episodes = [synth_episode(cfg, seed) for seed in (11, 12)]
        reports = train_demo(episodes, 200, seed=0)
        self.assertLessEqual(reports[-1].total, 0.5 * reports[0].total)

    @tag('slow')
    def test_prototype_loss_spreads_prototypes(self):
        episodes = [synth_episode(TRAIN_CONFIG, seed) for seed in (21, 22)]
        spread = train_demo(episodes, 200, seed=0, weights=LossWeights(lambda_proto=1.0))
        free = train_demo(episodes, 200, seed=0, weights=LossWeights(lambda_proto=0.0))
        self.assertLess(spread[-1].mean_cosine, free[-1].mean_cosine)
