"""Extraction shapes, sanity properties, and determinism."""

import numpy as np
import pytest

from vqfeat.backbones import build_fast_pathway, build_spatial_trunk
from vqfeat.errors import ConfigError, DataError
from vqfeat.extract import MIN_MOTION_FRAMES, extract_motion, extract_spatial

from conftest import moving_clip


class TestSpatial:
    def test_shapes_and_dtype(self, trunk):
        feats = extract_spatial(moving_clip(7), trunk)
        assert feats.shape == (7, 4096)
        assert feats.dtype == np.float32

    def test_solid_color_clip_has_zero_std_half(self, trunk):
        # 32x32 input collapses the last stage to a 1x1 map; a constant map
        # has zero spatial std. Larger inputs keep multiple positions whose
        # zero-padding borders differ, so this property is resolution-bound.
        solid = np.full((4, 32, 32, 3), 137, dtype=np.uint8)
        feats = extract_spatial(solid, trunk)
        assert feats.shape == (4, 4096)
        assert np.all(feats[:, 2048:] == 0.0)

    def test_batching_does_not_change_values(self, trunk):
        clip = moving_clip(5, seed=2)
        a = extract_spatial(clip, trunk, batch=2)
        b = extract_spatial(clip, trunk, batch=8)
        # conv kernel selection depends on batch shape, so agreement is
        # float32-level rather than bitwise
        np.testing.assert_allclose(a, b, rtol=1e-4, atol=1e-4)

    def test_bad_batch_rejected(self, trunk):
        with pytest.raises(ConfigError):
            extract_spatial(moving_clip(2), trunk, batch=0)


class TestMotion:
    def test_64_frames_give_32_rows(self, fast):
        feats = extract_motion(moving_clip(64, seed=3), fast)
        assert feats.shape == (32, 512)
        assert feats.dtype == np.float32

    def test_odd_length_keeps_ceil_half(self, fast):
        feats = extract_motion(moving_clip(9, seed=4), fast)
        assert feats.shape == (5, 512)

    def test_too_short_clip_names_minimum(self, fast):
        with pytest.raises(DataError, match=str(MIN_MOTION_FRAMES)):
            extract_motion(moving_clip(MIN_MOTION_FRAMES - 1), fast)

    def test_bad_window_rejected(self, fast):
        with pytest.raises(ConfigError):
            extract_motion(moving_clip(16), fast, window=2)

    def test_repeated_frame_has_flat_interior(self, fast):
        # a temporally constant clip must give identical features at every
        # position whose receptive field stays off the zero temporal padding;
        # stem radius 2 plus four stage radii leaves a 6-position margin
        frame = moving_clip(1, seed=5)[0]
        clip = np.repeat(frame[None], 64, axis=0)
        feats = extract_motion(clip, fast)
        interior = feats[6:-6]
        assert np.max(np.ptp(interior, axis=0)) < 1e-5

    def test_windowing_covers_everything_once(self, fast):
        # 44 frames -> 22 positions: window 32 -> a 16-position pass plus a
        # right-aligned tail window. Rows within the 6-position receptive
        # radius of a window edge see that window's own padding, so only
        # rows 0..9 are comparable against a single-window run.
        clip = moving_clip(44, seed=6)
        feats = extract_motion(clip, fast, window=32)
        assert feats.shape == (22, 512)
        assert np.all(np.isfinite(feats))
        single = extract_motion(clip, fast, window=64)
        assert np.array_equal(feats[:10], single[:10])


class TestDeterminism:
    def test_same_seed_rebuild_is_bit_identical(self, trunk, fast):
        clip = moving_clip(16, seed=7)
        spatial_a = extract_spatial(clip, trunk)
        motion_a = extract_motion(clip, fast)
        spatial_b = extract_spatial(clip, build_spatial_trunk(seed=0))
        motion_b = extract_motion(clip, build_fast_pathway(seed=0))
        assert np.array_equal(spatial_a, spatial_b)
        assert np.array_equal(motion_a, motion_b)

    def test_different_seed_differs(self, trunk):
        clip = moving_clip(4, seed=8)
        a = extract_spatial(clip, trunk)
        b = extract_spatial(clip, build_spatial_trunk(seed=1))
        assert not np.array_equal(a, b)
