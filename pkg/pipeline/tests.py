import json
from io import StringIO
from pathlib import Path
from unittest import mock

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings, tag
from rest_framework.exceptions import ValidationError

from episodes.storage import save_episode
from episodes.synthesis import synth_episode
from episodes.testing import TempDirMixin
from prototypes.storage import load_prototypes
from segmentation.models import LossReport
from verify.benchmark import BenchConfig, run_benchmark
from verify.gradients import TOLERANCE

from .exceptions import RunConfigError
from .models import RunConfig
from .runner import episode_sources, run_episode, run_episodes
from .serializers import load_run_config

SMALL = {
    'k_shots': 2, 't_frames': 2, 'n_prototypes': 2, 'channels': 16, 'in_channels': 16,
    'l3_height': 8, 'l3_width': 12, 'image_height': 16, 'image_width': 24, 'blob_radius': 5,
    'kmeans_restarts': 2, 'steps': 3, 'min_loss_reduction': 0.0,
}


class RunDirMixin(TempDirMixin):
    def write_config(self, **values):
        path = self.tmp / 'run.json'
        path.write_text(json.dumps({**SMALL, **values}))
        return path


def tree_bytes(directory: Path):
    return {str(p.relative_to(directory)): p.read_bytes() for p in sorted(directory.rglob('*')) if p.is_file()}


class RunConfigTests(RunDirMixin, SimpleTestCase):
    def test_defaults(self):
        cfg = load_run_config(output_dir=str(self.tmp))
        self.assertEqual((cfg.k_shots, cfg.t_frames, cfg.n_prototypes, cfg.channels), (5, 5, 5, 256))
        self.assertEqual((cfg.lambda_self, cfg.lambda_co), (0.8, 0.2))
        self.assertEqual(cfg.loss_weights().lambda_ce, 5.0)
        self.assertEqual((cfg.lr, cfg.min_loss_reduction), (2e-3, 0.5))
        self.assertFalse(cfg.is_baseline)

    def test_settings_carry_no_database_apps(self):
        self.assertEqual(settings.DATABASES, {})
        self.assertFalse([app for app in settings.INSTALLED_APPS if app.startswith('django.contrib.')])

    @override_settings(HPAN_SEED=42)
    def test_seed_defaults_to_setting(self):
        self.assertEqual(load_run_config().seed, 42)

    def test_overrides_beat_file(self):
        path = self.write_config(seed=3, lambda_co=0.5)
        cfg = load_run_config(path, seed=9, lambda_proto=None)
        self.assertEqual(cfg.seed, 9)
        self.assertEqual(cfg.lambda_co, 0.5)
        self.assertEqual(cfg.lambda_proto, 1.0)

    def test_baseline_turns_off_both_components(self):
        cfg = load_run_config(baseline=True)
        self.assertFalse(cfg.use_pgam)
        self.assertFalse(cfg.use_self_attention)
        self.assertTrue(cfg.is_baseline)
        self.assertFalse(cfg.network_options().use_pgam)

    def test_invalid_values(self):
        with self.assertRaises(ValidationError):
            load_run_config(tau_fg=1.5)
        with self.assertRaises(ValidationError):
            load_run_config(k_shots=1, n_prototypes=1)
        with self.assertRaises(ValidationError):
            load_run_config(episode_dir=str(self.tmp / 'missing'))

    def test_bad_files(self):
        path = self.tmp / 'bad.json'
        path.write_text('{"k_shots": 2,')
        with self.assertRaises(RunConfigError):
            load_run_config(path)
        path.write_text('{"shots": 2}')
        with self.assertRaises(RunConfigError) as ctx:
            load_run_config(path)
        self.assertIn('shots', str(ctx.exception))
        path.write_text('[1, 2]')
        with self.assertRaises(RunConfigError):
            load_run_config(path)

    def test_synth_config(self):
        cfg = RunConfig(**SMALL)
        synth = cfg.synth_config()
        self.assertEqual((synth.k_shots, synth.channels, synth.l4_height), (2, 16, 4))


class RunEpisodeTests(RunDirMixin, SimpleTestCase):
    def setUp(self):
        super().setUp()
        self.cfg = RunConfig(**SMALL, output_dir=self.tmp / 'out')

    def test_pseudo_masks_find_planted_objects(self):
        cfg = RunConfig(**dict(SMALL, separation=10.0), output_dir=self.tmp)
        result = run_episode(cfg, synth_episode(cfg.synth_config(), 0), self.tmp / 'run')
        self.assertGreaterEqual(result.pseudo_evaluation.j_mean, 0.5)

    def test_writes_all_artefacts(self):
        result = run_episode(self.cfg, synth_episode(self.cfg.synth_config(), 1), self.tmp / 'run')
        names = set(tree_bytes(self.tmp / 'run'))
        for name in ('masks/frame_000.hptn', 'masks/frame_001.hptn', 'pseudo_masks/frame_001.hptn',
                     'prototypes/prototypes.json', 'prototypes/holistic.hptn', 'metrics.csv', 'pseudo_metrics.csv'):
            self.assertIn(name, names)
        self.assertEqual(result.masks[0].spatial, (16, 24))
        self.assertEqual(result.pseudo_masks[0].spatial, (4, 6))
        self.assertEqual(load_prototypes(self.tmp / 'run' / 'prototypes')['holistic'].size, 4)
        self.assertTrue((self.tmp / 'run' / 'metrics.csv').read_text().startswith('frame,j,f\n0,'))

    def test_null_signal_completes(self):
        cfg = RunConfig(**dict(SMALL, separation=0.0), output_dir=self.tmp)
        result = run_episode(cfg, synth_episode(cfg.synth_config(), 2), self.tmp / 'run')
        self.assertEqual(len(result.masks), 2)
        self.assertTrue(0.0 <= result.evaluation.j_mean <= 1.0)

    def test_deterministic(self):
        episode = synth_episode(self.cfg.synth_config(), 3)
        run_episode(self.cfg, episode, self.tmp / 'a')
        run_episode(self.cfg, synth_episode(self.cfg.synth_config(), 3), self.tmp / 'b')
        self.assertEqual(tree_bytes(self.tmp / 'a'), tree_bytes(self.tmp / 'b'))

    def test_baseline(self):
        cfg = RunConfig(**SMALL, use_pgam=False, use_self_attention=False, output_dir=self.tmp)
        result = run_episode(cfg, synth_episode(cfg.synth_config(), 4), self.tmp / 'run')
        sets = load_prototypes(self.tmp / 'run' / 'prototypes')
        self.assertNotIn('support_raw', sets)
        self.assertEqual(sets['holistic'].size, 4)
        self.assertIsNotNone(result.report)

    def test_job_count_does_not_change_output(self):
        cfg = RunConfig(**dict(SMALL, n_episodes=3), output_dir=self.tmp / 'serial')
        serial = run_episodes(cfg, jobs=1)
        parallel = run_episodes(RunConfig(**dict(SMALL, n_episodes=3), output_dir=self.tmp / 'parallel'), jobs=3)
        self.assertEqual([r.name for r in serial], ['synth_0', 'synth_1', 'synth_2'])
        self.assertEqual([r.name for r in parallel], ['synth_0', 'synth_1', 'synth_2'])
        self.assertEqual(tree_bytes(self.tmp / 'serial'), tree_bytes(self.tmp / 'parallel'))

    def test_stored_episode(self):
        directory = self.tmp / 'episode'
        save_episode(synth_episode(self.cfg.synth_config(), 5), directory)
        cfg = RunConfig(**SMALL, episode_dir=directory, output_dir=self.tmp / 'out')
        self.assertEqual(episode_sources(cfg), [('episode', directory)])
        (result,) = run_episodes(cfg)
        self.assertEqual(result.output_dir, self.tmp / 'out' / 'episode')
        self.assertIsNotNone(result.evaluation)


class CommandTests(RunDirMixin, SimpleTestCase):
    def call(self, *args):
        out = StringIO()
        call_command(*args, stdout=out)
        return out.getvalue()

    def test_run_episode(self):
        out = self.call('run_episode', '--synth', '--config', str(self.write_config()), '--out', str(self.tmp / 'o'))
        self.assertIn('synth_0: 2 masks', out)
        self.assertIn('pseudo-mask J=', out)
        self.assertTrue((self.tmp / 'o' / 'synth_0' / 'metrics.csv').exists())

    def test_run_episode_needs_a_source(self):
        with self.assertRaises(CommandError):
            self.call('run_episode', '--out', str(self.tmp))

    def test_module_qualified_errors(self):
        empty = self.tmp / 'empty'
        empty.mkdir()
        with self.assertRaises(CommandError) as ctx:
            self.call('run_episode', '--episode', str(empty), '--config', str(self.write_config()))
        self.assertTrue(str(ctx.exception).startswith('episode_core: '))
        with self.assertRaises(CommandError) as ctx:
            self.call('run_episode', '--synth', '--config', str(self.write_config(tau_fg=2.0)))
        self.assertTrue(str(ctx.exception).startswith('config: '))

    def test_metrics_on_identical_directories(self):
        self.call('run_episode', '--synth', '--config', str(self.write_config()), '--out', str(self.tmp / 'o'))
        masks = self.tmp / 'o' / 'synth_0' / 'masks'
        out = self.call('metrics', str(masks), str(masks))
        self.assertEqual(out.splitlines(), ['frame,j,f', '0,1,1', '1,1,1'])

    def test_train_demo(self):
        out = self.call('train_demo', '--config', str(self.write_config()), '--out', str(self.tmp / 't'))
        lines = (self.tmp / 't' / 'trajectory.csv').read_text().splitlines()
        self.assertEqual(lines[0], 'step,ce,iou,proto,total')
        self.assertEqual(len(lines), 4)
        self.assertIn('total loss', out)

    def test_train_demo_required_reduction(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('train_demo', '--config', str(self.write_config()), '--out', str(self.tmp),
                      '--require-reduction', '0.99')
        self.assertTrue(str(ctx.exception).startswith('seg_head: '))

    def test_train_demo_applies_configured_bound_without_flag(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('train_demo', '--config', str(self.write_config(min_loss_reduction=0.99)), '--out', str(self.tmp))
        self.assertIn('below the required 99%', str(ctx.exception))

    @tag('slow')
    @override_settings(HPAN_SEED=0)
    def test_train_demo_defaults_halve_the_loss(self):
        out = self.call('train_demo', '--out', str(self.tmp))
        rows = (self.tmp / 'trajectory.csv').read_text().splitlines()[1:]
        self.assertEqual(len(rows), 200)
        first, last = float(rows[0].split(',')[-1]), float(rows[-1].split(',')[-1])
        self.assertLessEqual(last, 0.5 * first)
        self.assertIn('Wrote 200 steps', out)

    def test_bench(self):
        tiny = [BenchConfig('tiny', 2, 2, 2, channels=4, height=2, width=2)]
        with mock.patch('pipeline.management.commands.bench.bench_grid', return_value=tiny), \
                mock.patch('pipeline.management.commands.bench.run_benchmark', wraps=run_benchmark) as runner:
            out = self.call('bench', '--repetitions', '1', '--config', str(self.write_config(seed=4)),
                            '--jobs', '2', '--out', str(self.tmp))
        runner.assert_called_once_with(tiny, repetitions=1, seed=4, jobs=2)
        self.assertIn('tiny:', out)
        self.assertTrue((self.tmp / 'bench.csv').read_text().startswith('config,K,T,Np,C,HW,'))

    def test_gradcheck_prints_groups(self):
        report = LossReport(ce=0.1, iou=0.2, proto=0.3, total=1.0).with_grad_check({'head': 1e-7}, 1e-3)
        with mock.patch('pipeline.management.commands.gradcheck.checked_loss_report',
                        return_value=report) as check:
            out = self.call('gradcheck', '--config', str(self.write_config(seed=5)), '--jobs', '2')
        check.assert_called_once_with(seed=5, tolerance=TOLERANCE, jobs=2)
        self.assertIn('head: 1.000e-07', out)
        self.assertIn('excluded: kmeans', out)

    def test_gradcheck_failure_exits_with_module(self):
        report = LossReport(ce=0.1, iou=0.2, proto=0.3, total=1.0).with_grad_check({'head': 0.5}, 1e-3)
        with mock.patch('pipeline.management.commands.gradcheck.checked_loss_report', return_value=report):
            with self.assertRaises(CommandError) as ctx:
                self.call('gradcheck')
        self.assertEqual(str(ctx.exception), 'verify: gradient check failed for head')

    @tag('slow')
    def test_gradcheck(self):
        out = self.call('gradcheck')
        self.assertIn('graph.co:', out)
        self.assertIn('excluded: kmeans', out)

    @tag('slow')
    def test_selftest(self):
        out = self.call('selftest')
        self.assertNotIn('FAIL', out)
