import json
import struct
from importlib import import_module

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from attention.exceptions import AttentionShapeError
from metrics.exceptions import MetricsShapeError
from prototypes.similarity import pairwise_cosine

from .container import HEADER_SIZE, decode_tensor, encode_tensor, load_tensor, write_tensor
from .exceptions import (
    BadMagicError,
    ConfigError,
    HpanError,
    InvariantError,
    NonFiniteError,
    ShapeError,
    TensorFormatError,
    TensorIOError,
    TruncatedPayloadError,
    UnsupportedFormatError,
)
from .models import Episode, FeatureMap, FeatureStack, Mask, QueryItem, SupportItem, SynthConfig
from .resampling import resample_grid, resample_grid_backward, resample_mask
from .serializers import SynthConfigSerializer
from .storage import load_episode, save_episode
from .synthesis import synth_episode
from .testing import TempDirMixin

SMALL = SynthConfig(k_shots=2, t_frames=3, channels=8, l3_height=8, l3_width=12,
                    image_height=16, image_width=24, blob_radius=5, n_distractors=3)


class ContainerTests(TempDirMixin, SimpleTestCase):
    def test_feature_map_round_trip_is_byte_identical(self):
        rng = np.random.default_rng(0)
        original = FeatureMap('l3', rng.standard_normal((3, 4, 5)))
        path = self.tmp / 'fm.hptn'
        write_tensor(path, original)
        loaded = load_tensor(path)
        self.assertEqual(loaded, original)
        self.assertEqual(encode_tensor(loaded), path.read_bytes())

    def test_file_size_is_header_plus_payload(self):
        path = self.tmp / 'big.hptn'
        write_tensor(path, FeatureMap('l3', np.zeros((256, 31, 54))))
        self.assertEqual(path.stat().st_size, 64 + 256 * 31 * 54 * 4)

    def test_header_layout(self):
        buffer = encode_tensor(Mask(np.ones((2, 3))))
        self.assertEqual(buffer[:4], b'HPTN')
        self.assertEqual(int.from_bytes(buffer[4:8], 'little'), 1)
        self.assertEqual(int.from_bytes(buffer[8:12], 'little'), 0)
        self.assertEqual(int.from_bytes(buffer[12:16], 'little'), 2)
        self.assertEqual(int.from_bytes(buffer[16:24], 'little'), 2)
        self.assertEqual(int.from_bytes(buffer[24:32], 'little'), 3)
        self.assertEqual(len(buffer), HEADER_SIZE + 6 * 4)

    def test_mask_out_of_range_is_rejected(self):
        with self.assertRaises(InvariantError):
            Mask(np.full((2, 2), 1.5))

    def test_zero_length_file_is_truncated(self):
        path = self.tmp / 'empty.hptn'
        path.write_bytes(b'')
        with self.assertRaises(TruncatedPayloadError):
            load_tensor(path)

    def test_two_dims_for_a_feature_map_is_a_shape_error(self):
        path = self.tmp / 'mask.hptn'
        write_tensor(path, Mask(np.zeros((4, 4))))
        with self.assertRaises(ShapeError):
            load_tensor(path, kind='feature_map')

    def test_bad_magic(self):
        buffer = bytearray(encode_tensor(Mask(np.zeros((2, 2)))))
        buffer[:4] = b'NOPE'
        with self.assertRaises(BadMagicError):
            decode_tensor(bytes(buffer))

    def test_unsupported_version_and_dtype(self):
        buffer = bytearray(encode_tensor(Mask(np.zeros((2, 2)))))
        buffer[4] = 2
        with self.assertRaises(UnsupportedFormatError):
            decode_tensor(bytes(buffer))
        buffer[4], buffer[8] = 1, 1
        with self.assertRaises(UnsupportedFormatError):
            decode_tensor(bytes(buffer))

    def test_short_payload(self):
        buffer = encode_tensor(Mask(np.zeros((3, 3))))
        with self.assertRaises(TruncatedPayloadError):
            decode_tensor(buffer[:-4])

    @staticmethod
    def _raw(dims, payload_floats=0):
        header = struct.pack('<4sIII', b'HPTN', 1, 0, len(dims)) + struct.pack(f'<{len(dims)}Q', *dims)
        return header.ljust(HEADER_SIZE, b'\x00') + bytes(4 * payload_floats)

    def test_dims_whose_product_overflows_64_bits(self):
        with self.assertRaises(TensorFormatError):
            decode_tensor(self._raw((2 ** 32, 2 ** 32)))
        with self.assertRaises(TruncatedPayloadError):
            decode_tensor(self._raw((2 ** 20, 2 ** 20), 4))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 2 ** 64 - 1) | st.integers(0, 4), min_size=1, max_size=6), st.integers(0, 16))
    def test_arbitrary_dims_fail_as_format_errors(self, dims, payload_floats):
        try:
            values = decode_tensor(self._raw(dims, payload_floats), kind='array')
        except TensorFormatError:
            return
        self.assertEqual(values.shape, tuple(dims))
        self.assertLessEqual(values.size, payload_floats)

    def test_nan_payload(self):
        buffer = bytearray(encode_tensor(np.zeros((2, 2), dtype=np.float32)))
        buffer[HEADER_SIZE:HEADER_SIZE + 4] = np.array([np.nan], dtype='<f4').tobytes()
        with self.assertRaises(NonFiniteError):
            decode_tensor(bytes(buffer))

    def test_io_failure_carries_path(self):
        missing = self.tmp / 'missing' / 'x.hptn'
        with self.assertRaises(TensorIOError) as ctx:
            load_tensor(missing)
        self.assertEqual(ctx.exception.path, missing)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
    def test_round_trip_identity(self, channels, height, width, seed):
        values = np.random.default_rng(seed).standard_normal((channels, height, width))
        original = FeatureMap('l4', values)
        self.assertEqual(decode_tensor(encode_tensor(original), level='l4'), original)


class ResampleTests(SimpleTestCase):
    def test_constant_field_stays_constant(self):
        ones = Mask(np.ones((3, 5)))
        for mode in ('nearest', 'bilinear'):
            assert_array_equal(resample_mask(ones, 7, 2, mode).data, np.ones((7, 2)))

    def test_nearest_upsample(self):
        out = resample_mask(Mask(np.array([[1.0, 0.0], [0.0, 0.0]])), 4, 4, 'nearest')
        expected = np.zeros((4, 4))
        expected[:2, :2] = 1.0
        assert_array_equal(out.data, expected)
        self.assertTrue(out.is_binary)

    def test_identity_when_dims_match(self):
        mask = Mask(np.random.default_rng(1).uniform(size=(4, 6)))
        for mode in ('nearest', 'bilinear'):
            self.assertEqual(resample_mask(mask, 4, 6, mode), mask)
            assert_allclose(resample_grid(mask.values(), 4, 6, mode), mask.values())

    def test_invalid_output_dims(self):
        with self.assertRaises(ShapeError):
            resample_mask(Mask(np.ones((2, 2))), 0, 3)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 12), st.integers(1, 12), st.integers(0, 1000))
    def test_bilinear_stays_in_unit_interval(self, h, w, out_h, out_w, seed):
        mask = Mask(np.random.default_rng(seed).integers(0, 2, size=(h, w)).astype(np.float64))
        out = resample_mask(mask, out_h, out_w, 'bilinear')
        self.assertGreaterEqual(out.data.min(), 0.0)
        self.assertLessEqual(out.data.max(), 1.0)

    def test_backward_is_adjoint(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((5, 7))
        g = rng.standard_normal((9, 4))
        lhs = np.sum(resample_grid(x, 9, 4) * g)
        rhs = np.sum(x * resample_grid_backward(g, 5, 7))
        self.assertAlmostEqual(lhs, rhs, places=10)


class EpisodeModelTests(SimpleTestCase):
    def _stack(self, channels=4):
        return FeatureStack(FeatureMap('l3', np.zeros((channels, 4, 6))), FeatureMap('l4', np.zeros((channels, 2, 3))))

    def test_l4_must_be_half_of_l3(self):
        with self.assertRaises(InvariantError):
            FeatureStack(FeatureMap('l3', np.zeros((2, 5, 5))), FeatureMap('l4', np.zeros((2, 2, 2))))

    def test_support_mask_must_have_foreground(self):
        with self.assertRaises(InvariantError):
            Episode(support=[SupportItem(self._stack(), Mask(np.zeros((4, 6))))],
                    query=[QueryItem(self._stack())])

    def test_channels_must_agree(self):
        with self.assertRaises((InvariantError, ShapeError)):
            Episode(support=[SupportItem(self._stack(4), Mask(np.ones((4, 6))))],
                    query=[QueryItem(self._stack(5))])

    def test_needs_support_and_query(self):
        with self.assertRaises(InvariantError):
            Episode(support=[], query=[QueryItem(self._stack())])


class SynthEpisodeTests(TempDirMixin, SimpleTestCase):
    def test_deterministic(self):
        self.assertEqual(synth_episode(SMALL, 7), synth_episode(SMALL, 7))
        self.assertNotEqual(synth_episode(SMALL, 7), synth_episode(SMALL, 8))

    def test_shapes(self):
        episode = synth_episode(SMALL, 0)
        self.assertEqual((episode.k_shots, episode.t_frames, episode.channels), (2, 3, 8))
        self.assertEqual(episode.l3_shape, (8, 12))
        self.assertEqual(episode.l4_shape, (4, 6))
        self.assertTrue(all(item.mask.is_binary for item in episode.support))

    def test_separation_makes_foreground_coherent(self):
        cfg = SynthConfig(k_shots=2, t_frames=2, channels=32, separation=10.0, noise=1.0)
        episode = synth_episode(cfg, 11)
        fg, bg = [], []
        for item in episode.query:
            rows = item.features.l3.rows()
            mask = resample_mask(item.mask, *item.features.l3.spatial).values().ravel() > 0.5
            fg.append(rows[mask])
            bg.append(rows[~mask])
        fg, bg = np.concatenate(fg), np.concatenate(bg)
        within, _ = pairwise_cosine(fg, fg)
        across, _ = pairwise_cosine(fg, bg)
        self.assertGreater(within.mean(), across.mean())

    def _split_foreground(self, separation):
        cfg = SynthConfig(k_shots=1, t_frames=1, channels=16, separation=separation)
        support = synth_episode(cfg, 2).support[0]
        rows = support.features.l3.rows()
        fg = resample_mask(support.mask, cfg.l3_height, cfg.l3_width).values().ravel() > 0.5
        self.assertTrue(0 < fg.sum() < fg.size)
        return rows[fg], rows[~fg]

    def test_zero_separation_is_the_null_case(self):
        fg, bg = self._split_foreground(0.0)
        self.assertLess(np.linalg.norm(fg.mean(axis=0) - bg.mean(axis=0)), 3.0)
        self.assertAlmostEqual(fg.std(), bg.std(), delta=0.25)
        fg, bg = self._split_foreground(10.0)
        self.assertGreater(np.linalg.norm(fg.mean(axis=0) - bg.mean(axis=0)), 8.0)

    def test_blob_larger_than_grid(self):
        with self.assertRaises(ConfigError):
            SynthConfig(image_height=16, image_width=16, l3_height=8, l3_width=8, blob_radius=9)

    def test_config_serializer(self):
        serializer = SynthConfigSerializer(data={'k_shots': 2, 'channels': 16})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        cfg = serializer.save()
        self.assertEqual((cfg.k_shots, cfg.t_frames, cfg.channels), (2, 5, 16))
        self.assertFalse(SynthConfigSerializer(data={'k_shots': 0}).is_valid())

    def test_save_and_load_episode(self):
        episode = synth_episode(SMALL, 5)
        save_episode(episode, self.tmp)
        manifest = json.loads((self.tmp / 'episode.json').read_text())
        self.assertIn('support[0].features.l3', manifest['tensors'])
        self.assertEqual(load_episode(self.tmp), episode)

    def test_manifest_with_gap_is_rejected(self):
        save_episode(synth_episode(SMALL, 5), self.tmp)
        path = self.tmp / 'episode.json'
        manifest = json.loads(path.read_text())
        for member in ('features.l3', 'features.l4', 'mask'):
            del manifest['tensors'][f'support[0].{member}']
        path.write_text(json.dumps(manifest))
        with self.assertRaises(ConfigError):
            load_episode(self.tmp)


class ExceptionHierarchyTests(SimpleTestCase):
    APPS = ('episodes', 'prototypes', 'attention', 'segmentation', 'metrics', 'verify', 'pipeline')

    def test_every_app_error_is_a_pipeline_error(self):
        for app in self.APPS:
            module = import_module(f'{app}.exceptions')
            errors = [value for value in vars(module).values()
                      if isinstance(value, type) and issubclass(value, Exception) and value.__module__ == module.__name__]
            self.assertTrue(errors, app)
            for error in errors:
                self.assertTrue(issubclass(error, HpanError), error)

    def test_shape_errors_keep_their_module_label(self):
        for error, label in ((AttentionShapeError, 'bpam'), (MetricsShapeError, 'metrics')):
            self.assertTrue(issubclass(error, ShapeError))
            self.assertTrue(issubclass(error, ValueError))
            self.assertEqual(error.module, label)
