import math
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
from django.test import SimpleTestCase, override_settings, tag
from numpy.testing import assert_allclose, assert_array_equal

from attention.blocks import attention, prototype_co_attention
from attention.models import AttentionBlockParams, TokenMatrix
from prototypes.clustering import kmeans
from prototypes.models import PrototypeSet

from .benchmark import BENCH_HEADER, BenchConfig, bench_config, bench_grid, run_benchmark, write_bench_csv
from .costs import cost_model
from .exceptions import GradientCheckError, GuardExceededError, NonFiniteEvaluationError
from .gradcheck import EXCLUDED, GROUPS, checked_loss_report, group_of, run_gradcheck
from .gradients import finite_diff_grad, relative_error
from .models import CostCounter
from .oracles import full_attention_oracle, kmeans_oracle, pair_seeded_objective
from .selftest import CheckResult, check_cost_model, check_full_attention, check_metrics, run_selftest


class FiniteDiffTests(SimpleTestCase):
    def test_quadratic_is_exact(self):
        assert_allclose(finite_diff_grad(lambda x: np.sum(x ** 2), np.array([1.0, 2.0])), [2.0, 4.0], atol=1e-8)

    def test_constant(self):
        assert_array_equal(finite_diff_grad(lambda x: 3.0, np.zeros(4)), np.zeros(4))

    def test_sine(self):
        grad = finite_diff_grad(lambda x: math.sin(x[0]), np.array([0.3]), step=1e-5)
        self.assertAlmostEqual(grad[0], math.cos(0.3), delta=1e-9)

    def test_caller_array_untouched(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        grad = finite_diff_grad(lambda y: float(np.prod(y)), x)
        assert_array_equal(x, [[1.0, 2.0], [3.0, 4.0]])
        self.assertEqual(grad.shape, (2, 2))

    def test_non_finite_evaluation_reports_index(self):
        with self.assertRaises(NonFiniteEvaluationError) as ctx:
            finite_diff_grad(lambda x: float('inf') if x[1] > 1.0 else 0.0, np.array([0.0, 1.0]))
        self.assertEqual(tuple(ctx.exception.index), (1,))

    def test_relative_error(self):
        self.assertEqual(relative_error([1.0, 2.0], [1.0, 2.0]), 0.0)
        self.assertAlmostEqual(relative_error([1.0, 2.0], [1.0, 2.2]), 0.2 / 2.2)
        self.assertEqual(relative_error(np.zeros(3), np.zeros(3)), 0.0)


class FullAttentionOracleTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_agrees_with_attention(self):
        for _ in range(20):
            q, kv = self.rng.standard_normal((7, 5)), self.rng.standard_normal((4, 5))
            params = AttentionBlockParams.initialize(5, self.rng)
            output, _ = full_attention_oracle(q, kv, params)
            assert_allclose(output, attention(q, kv, kv, params), rtol=1e-6, atol=1e-9)

    def test_counts_operations(self):
        q, kv = self.rng.standard_normal((4, 2)), self.rng.standard_normal((3, 2))
        _, counter = full_attention_oracle(q, kv, AttentionBlockParams.initialize(2, self.rng))
        self.assertEqual(counter.linear_macs, 2 * 2 * (4 + 2 * 3))
        self.assertEqual(counter.attention_macs, 2 * 4 * 3 * 2 + 4 * 3)
        self.assertGreater(counter.wall_ns, 0)
        self.assertGreater(counter.bytes_touched, 0)

    def test_accepts_token_matrices(self):
        t_q = TokenMatrix(self.rng.standard_normal((6, 3)), 'query', (1, 2, 3))
        t_s = TokenMatrix(self.rng.standard_normal((6, 3)), 'support', (1, 2, 3))
        params = AttentionBlockParams.initialize(3, self.rng)
        output, _ = full_attention_oracle(t_q, t_s, params)
        assert_allclose(output, attention(t_q.tokens, t_s.tokens, t_s.tokens, params), rtol=1e-6, atol=1e-9)

    def test_guard_at_forty_shots_and_frames(self):
        tokens = np.zeros((40 * 448, 256))
        with self.assertRaises(GuardExceededError) as ctx:
            full_attention_oracle(tokens, tokens, AttentionBlockParams.identity(256))
        self.assertGreater(ctx.exception.reduction, 10)
        self.assertIn('shrink', str(ctx.exception))

    @override_settings(HPAN_FULL_ATTENTION_MAX_MACS=50)
    def test_guard_follows_settings(self):
        q = self.rng.standard_normal((4, 2))
        with self.assertRaises(GuardExceededError):
            full_attention_oracle(q, q, AttentionBlockParams.identity(2))
        full_attention_oracle(q, q, AttentionBlockParams.identity(2), max_macs=1000)


class KMeansOracleTests(SimpleTestCase):
    def test_single_point(self):
        objective, assignment = kmeans_oracle([[1.0, 2.0]], [[1.0, 2.0]])
        self.assertEqual(objective, 0.0)
        assert_array_equal(assignment, [0])

    def test_ties_go_to_lowest_index(self):
        _, assignment = kmeans_oracle([[0.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [-1.0, 0.0]])
        assert_array_equal(assignment, [0, 0])

    def test_kmeans_never_loses_to_pair_seeding(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            points = rng.standard_normal((int(rng.integers(2, 9)), 2))
            result = kmeans(points, 2, seed)
            self.assertLessEqual(result.objective, pair_seeded_objective(points) + 1e-9, f"seed {seed}")
            self.assertAlmostEqual(kmeans_oracle(points, result.centroids)[0], result.objective, delta=1e-9)


class CostModelTests(SimpleTestCase):
    def test_defaults(self):
        estimate = cost_model(5, 5, 16, 28, 5, 256)
        self.assertLess(estimate.factored, estimate.full)
        self.assertAlmostEqual(estimate.attention_ratio, 44.8)

    def test_attention_term_is_linear_in_prototypes(self):
        single = cost_model(5, 5, 16, 28, 5, 256)
        double = cost_model(5, 5, 16, 28, 10, 256)
        self.assertEqual(double.factored_attention, 2 * single.factored_attention)
        self.assertEqual(double.full, single.full)

    def test_matches_instrumented_counters(self):
        rng = np.random.default_rng(1)
        k, t, height, width, n_p, channels = 2, 3, 2, 3, 2, 4
        t_q = TokenMatrix(rng.standard_normal((t * height * width, channels)), 'query', (t, height, width))
        t_s = TokenMatrix(rng.standard_normal((k * height * width, channels)), 'support', (k, height, width))
        p_h = PrototypeSet(rng.standard_normal((n_p * k, channels)), 'holistic', n_p)
        params = AttentionBlockParams.initialize(channels, rng)
        factored = CostCounter()
        prototype_co_attention(t_q, t_s, p_h, (params, params), factored)
        _, full = full_attention_oracle(t_q, t_s, params)
        estimate = cost_model(k, t, height, width, n_p, channels)
        self.assertEqual(factored.linear_macs, estimate.factored_linear)
        self.assertEqual(factored.attention_macs, estimate.factored_attention)
        self.assertEqual(full.mac_count, estimate.full)

    def test_rejects_non_positive(self):
        with self.assertRaises(ValueError):
            cost_model(0, 5, 16, 28, 5, 256)


class GradCheckTests(SimpleTestCase):
    def test_groups(self):
        self.assertEqual(group_of('graph.co.w_k'), 'graph.co')
        self.assertEqual(group_of('projection.bias'), 'projection')
        self.assertEqual(group_of('head.bias'), 'head')
        self.assertEqual(len([g for g in GROUPS if g.startswith('graph.')]), 3)
        self.assertEqual(len([g for g in GROUPS if g.startswith('attention.')]), 4)
        self.assertNotIn('kmeans', GROUPS)
        self.assertIn('kmeans', EXCLUDED)

    def test_all_groups_pass(self):
        report = run_gradcheck(seed=0)
        self.assertEqual(tuple(report), GROUPS)
        self.assertLess(max(report.values()), 1e-3)
        self.assertEqual(run_gradcheck(seed=0, jobs=2), report)

    def test_perturbed_gradient_is_detected(self):
        def perturb(key, grad):
            return grad * 1.1 if key == 'graph.co.w_q' else grad

        with self.assertRaises(GradientCheckError) as ctx:
            run_gradcheck(seed=0, perturb=perturb)
        self.assertEqual(list(ctx.exception.failures), ['graph.co'])
        self.assertEqual(tuple(ctx.exception.report), GROUPS)
        self.assertIn('graph.co', str(ctx.exception))

    def test_loss_report_carries_group_verdicts(self):
        failure = GradientCheckError({'head': 0.5}, {'projection': 1e-7, 'head': 0.5})
        with mock.patch('verify.gradcheck.run_gradcheck', side_effect=failure):
            report = checked_loss_report(seed=0, tolerance=1e-3)
        self.assertEqual(report.grad_check, {'projection': (True, 1e-7), 'head': (False, 0.5)})
        self.assertEqual(report.failed_groups, ['head'])
        self.assertTrue(report.is_finite)
        self.assertAlmostEqual(report.total, 5 * report.ce + report.iou + report.proto)


class BenchmarkTests(SimpleTestCase):
    TINY = BenchConfig('tiny', 2, 3, 2, channels=8, height=2, width=3)

    def test_grid_presets(self):
        self.assertEqual(len(bench_grid('support-query')), 7)
        self.assertEqual([c.n_prototypes for c in bench_grid('prototypes')], [1, 5, 10, 15, 20])
        self.assertEqual(len(bench_grid()), 12)
        self.assertEqual(bench_grid()[0].pixels, 448)
        with self.assertRaises(ValueError):
            bench_grid('everything')

    def test_row_matches_cost_model(self):
        row = bench_config(self.TINY, repetitions=2)
        estimate = cost_model(2, 3, 2, 3, 2, 8)
        self.assertEqual(row.mac_factored, estimate.factored)
        self.assertEqual(row.mac_full, estimate.full)
        self.assertFalse(row.skipped)
        self.assertGreater(row.ns_factored, 0)

    def test_guarded_config_is_skipped(self):
        row = bench_config(self.TINY, repetitions=1, max_macs=1)
        self.assertTrue(row.skipped)
        self.assertEqual(row.mac_full, cost_model(2, 3, 2, 3, 2, 8).full)
        self.assertEqual(row.as_row()[-1], 'skipped')

    def test_csv(self):
        rows = run_benchmark([self.TINY], repetitions=1)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'bench.csv'
            write_bench_csv(path, rows)
            lines = path.read_text().splitlines()
        self.assertEqual(lines[0], ','.join(BENCH_HEADER))
        self.assertTrue(lines[1].startswith('tiny,2,3,2,8,6,'))

    def test_threaded_rows_keep_order(self):
        configs = [self.TINY, BenchConfig('other', 3, 2, 1, channels=4, height=2, width=2)]
        sequential = run_benchmark(configs, repetitions=1)
        threaded = run_benchmark(configs, repetitions=1, jobs=2)
        self.assertEqual([row.config.name for row in threaded], ['tiny', 'other'])
        self.assertEqual([(r.mac_factored, r.mac_full) for r in threaded],
                         [(r.mac_factored, r.mac_full) for r in sequential])

    @tag('slow')
    def test_time_grows_with_prototypes(self):
        rows = run_benchmark(bench_grid('prototypes'))
        times = [row.ns_factored for row in rows]
        self.assertEqual(times, sorted(times))
        self.assertEqual(len(set(times)), len(times))
        self.assertLess(rows[1].mac_factored, rows[1].mac_full)

    @tag('slow')
    def test_time_grows_with_shots_and_frames(self):
        configs = [c for c in bench_grid('support-query') if c.k_shots == c.t_frames and c.k_shots <= 20]
        times = [row.ns_factored for row in run_benchmark(configs)]
        self.assertEqual(len(times), 3)
        self.assertLess(times[0], times[1])
        self.assertLess(times[1], times[2])


class SelftestTests(SimpleTestCase):
    def test_quick_checks(self):
        for check in (check_full_attention, check_cost_model, check_metrics):
            passed, detail = check()
            self.assertTrue(passed, detail)

    def test_failures_are_reported(self):
        checks = (('fine', lambda: (True, 'ok')), ('broken', lambda: (False, 'nope')))
        with mock.patch('verify.selftest.CHECKS', checks):
            results = run_selftest()
        self.assertEqual(results, [CheckResult('fine', True, 'ok'), CheckResult('broken', False, 'nope')])

    @tag('slow')
    def test_clean_build_passes(self):
        results = run_selftest()
        self.assertTrue(all(r.passed for r in results), [r for r in results if not r.passed])
