import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from episodes.container import write_tensor
from episodes.exceptions import InvariantError
from episodes.models import Mask
from verify.oracles import naive_boundary_f

from .evaluation import (
    boundary_map,
    contour_accuracy,
    default_tolerance,
    evaluate_dirs,
    evaluate_episode,
    region_similarity,
    write_metrics_csv,
)
from .exceptions import MetricsShapeError
from .models import EvalResult, decay, recall


def square(shape, top, left, size):
    mask = np.zeros(shape)
    mask[top:top + size, left:left + size] = 1.0
    return mask


class RegionSimilarityTests(SimpleTestCase):
    def test_examples(self):
        full = np.ones((4, 6))
        left = np.zeros((4, 6))
        left[:, :3] = 1
        self.assertEqual(region_similarity(full, full), 1.0)
        self.assertEqual(region_similarity(left, 1 - left), 0.0)
        self.assertEqual(region_similarity(left, full), 0.5)

    def test_both_empty(self):
        self.assertEqual(region_similarity(np.zeros((3, 3)), np.zeros((3, 3))), 1.0)

    def test_soft_masks_are_binarised(self):
        soft = np.full((2, 2), 0.5)
        self.assertEqual(region_similarity(Mask(soft), Mask(np.ones((2, 2)))), 1.0)
        self.assertEqual(region_similarity(np.full((2, 2), 0.49), np.ones((2, 2))), 0.0)

    def test_shape_mismatch(self):
        with self.assertRaises(MetricsShapeError):
            region_similarity(np.ones((2, 2)), np.ones((2, 3)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 16), st.integers(-3, 3), st.integers(-3, 3))
    def test_translation_invariance(self, seed, dy, dx):
        rng = np.random.default_rng(seed)
        pred, gt = np.zeros((20, 20)), np.zeros((20, 20))
        pred[5:15, 5:15] = rng.random((10, 10)) > 0.5
        gt[5:15, 5:15] = rng.random((10, 10)) > 0.5
        moved = [np.roll(np.roll(m, dy, axis=0), dx, axis=1) for m in (pred, gt)]
        self.assertAlmostEqual(region_similarity(pred, gt), region_similarity(*moved), places=12)


class ContourAccuracyTests(SimpleTestCase):
    def test_identical_masks(self):
        mask = square((20, 20), 4, 5, 8)
        self.assertEqual(contour_accuracy(mask, mask), 1.0)

    def test_one_pixel_shift_within_tolerance(self):
        pred = square((20, 20), 5, 5, 10)
        gt = square((20, 20), 5, 6, 10)
        self.assertEqual(contour_accuracy(pred, gt, tolerance_px=1), 1.0)
        self.assertLess(contour_accuracy(pred, gt, tolerance_px=0), 1.0)

    def test_separated_squares(self):
        pred = square((30, 30), 2, 2, 4)
        gt = square((30, 30), 20, 20, 4)
        self.assertEqual(contour_accuracy(pred, gt, tolerance_px=2), 0.0)

    def test_empty_boundaries(self):
        empty = np.zeros((8, 8))
        self.assertEqual(contour_accuracy(empty, empty), 1.0)
        self.assertEqual(contour_accuracy(empty, square((8, 8), 2, 2, 3)), 0.0)
        self.assertEqual(contour_accuracy(square((8, 8), 2, 2, 3), empty), 0.0)

    def test_boundary_at_image_edge(self):
        self.assertEqual(boundary_map(np.ones((3, 4), dtype=bool)).sum(), 3 * 4 - 2)

    def test_default_tolerance(self):
        self.assertEqual(default_tolerance((480, 854)), 8)
        self.assertEqual(default_tolerance((32, 56)), 1)

    def test_negative_tolerance(self):
        with self.assertRaises(ValueError):
            contour_accuracy(np.ones((4, 4)), np.ones((4, 4)), tolerance_px=-1)

    def test_shape_mismatch(self):
        with self.assertRaises(MetricsShapeError):
            contour_accuracy(np.ones((2, 2)), np.ones((3, 2)))

    def test_matches_naive_oracle_at_zero_tolerance(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            height, width = rng.integers(4, 33, size=2)
            pred = (rng.random((height, width)) > rng.uniform(0.2, 0.8)).astype(float)
            gt = (rng.random((height, width)) > rng.uniform(0.2, 0.8)).astype(float)
            self.assertAlmostEqual(contour_accuracy(pred, gt, 0), naive_boundary_f(pred, gt, 0), places=12,
                                   msg=f"seed {seed}")

    def test_matches_naive_oracle_with_tolerance(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            pred = (rng.random((12, 12)) > 0.6).astype(float)
            gt = (rng.random((12, 12)) > 0.6).astype(float)
            self.assertAlmostEqual(contour_accuracy(pred, gt, 2), naive_boundary_f(pred, gt, 2), places=12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 16), st.integers(0, 3))
    def test_bounded_and_symmetric(self, seed, tolerance):
        rng = np.random.default_rng(seed)
        pred, gt = rng.random((10, 14)) > 0.5, rng.random((10, 14)) > 0.5
        forward = contour_accuracy(pred, gt, tolerance)
        self.assertGreaterEqual(forward, 0.0)
        self.assertLessEqual(forward, 1.0)
        self.assertAlmostEqual(forward, contour_accuracy(gt, pred, tolerance), places=12)


class EvaluateEpisodeTests(SimpleTestCase):
    def test_all_perfect(self):
        masks = [square((10, 10), 2, 2, 5)] * 3
        result = evaluate_episode(masks, masks)
        self.assertEqual((result.j_mean, result.f_mean), (1.0, 1.0))
        self.assertEqual(result.j_recall, 1.0)
        self.assertEqual(result.j_decay, 0.0)

    def test_one_perfect_one_disjoint(self):
        gt = [square((10, 10), 0, 0, 4), square((10, 10), 0, 0, 4)]
        pred = [gt[0], square((10, 10), 6, 6, 4)]
        self.assertEqual(evaluate_episode(pred, gt).j_mean, 0.5)

    def test_matches_per_frame_recomputation(self):
        rng = np.random.default_rng(3)
        preds = [rng.random((9, 11)) for _ in range(6)]
        gts = [rng.random((9, 11)) > 0.4 for _ in range(6)]
        result = evaluate_episode(preds, gts, tolerance_px=1)
        self.assertEqual(result.j_per_frame, tuple(region_similarity(p, g) for p, g in zip(preds, gts)))
        self.assertEqual(result.f_per_frame, tuple(contour_accuracy(p, g, 1) for p, g in zip(preds, gts)))
        self.assertAlmostEqual(result.j_mean, sum(result.j_per_frame) / 6, delta=1e-12)

    def test_count_mismatch(self):
        with self.assertRaises(MetricsShapeError):
            evaluate_episode([np.ones((2, 2))], [])

    def test_csv(self):
        result = EvalResult.from_frames([1.0, 0.25], [0.5, 1.0])
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'metrics.csv'
            write_metrics_csv(path, result)
            self.assertEqual(path.read_text(), 'frame,j,f\n0,1,0.5\n1,0.25,1\n')

    def test_identical_directories(self):
        with tempfile.TemporaryDirectory() as tmp:
            directory = Path(tmp)
            for index in range(3):
                write_tensor(directory / f'frame_{index}.hptn', Mask(square((8, 8), index, index, 3)))
            result = evaluate_dirs(directory, directory)
        self.assertEqual(result.j_per_frame, (1.0, 1.0, 1.0))
        self.assertEqual(result.f_per_frame, (1.0, 1.0, 1.0))

    def test_directories_with_different_frames(self):
        with tempfile.TemporaryDirectory() as pred, tempfile.TemporaryDirectory() as gt:
            write_tensor(Path(pred) / 'a.hptn', Mask(np.ones((2, 2))))
            write_tensor(Path(gt) / 'b.hptn', Mask(np.ones((2, 2))))
            with self.assertRaises(MetricsShapeError):
                evaluate_dirs(pred, gt)


class StatisticsTests(SimpleTestCase):
    def test_recall(self):
        self.assertEqual(recall([0.2, 0.6, 0.5, 0.9]), 0.5)

    def test_decay(self):
        self.assertEqual(decay([1, 1, 1, 1, 0, 0, 0, 0]), 1.0)
        self.assertEqual(decay([0.7]), 0.0)

    def test_means_must_match_frames(self):
        with self.assertRaises(InvariantError):
            EvalResult(j_per_frame=(1.0, 0.0), f_per_frame=(1.0, 1.0), j_mean=0.6, f_mean=1.0)
        with self.assertRaises(InvariantError):
            EvalResult.from_frames([1.0], [1.0, 0.5])
