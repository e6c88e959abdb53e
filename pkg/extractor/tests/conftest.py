"""Shared fixtures: synthetic clips and session-scoped backbones."""

import numpy as np
import cv2
import pytest

from vqfeat.backbones import build_fast_pathway, build_spatial_trunk


def write_clip(path, frames):
    """Write (T, H, W, 3) RGB uint8 frames as a motion-JPEG AVI."""
    frames = np.asarray(frames)
    t, h, w, _ = frames.shape
    writer = cv2.VideoWriter(
        str(path), cv2.VideoWriter_fourcc(*"MJPG"), 24.0, (w, h)
    )
    assert writer.isOpened(), f"cannot open writer for {path}"
    for frame in frames:
        writer.write(cv2.cvtColor(frame, cv2.COLOR_RGB2BGR))
    writer.release()
    return path


def moving_clip(t, h=48, w=64, seed=0):
    """Drifting gradient plus noise, a cheap stand-in for camera motion."""
    rng = np.random.default_rng(seed)
    ramp = np.linspace(0, 200, w, dtype=np.float32)
    frames = np.empty((t, h, w, 3), dtype=np.uint8)
    for i in range(t):
        base = np.roll(ramp, 3 * i)[None, :, None] + rng.normal(0, 12, size=(h, w, 3))
        frames[i] = np.clip(base + 20, 0, 255).astype(np.uint8)
    return frames


@pytest.fixture(scope="session")
def trunk():
    return build_spatial_trunk(seed=0)


@pytest.fixture(scope="session")
def fast():
    return build_fast_pathway(seed=0)
