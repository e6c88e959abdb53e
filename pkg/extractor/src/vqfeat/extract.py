"""Per-video feature extraction for the two streams.

Spatial: every frame at native resolution through the image trunk, pooled to
(T, 4096). Motion: every 2nd frame through the fast pathway in clip windows,
pooled to (ceil(T/2), 512). Both run without gradients and return float32
arrays ready for the interchange tensor format.
"""

from __future__ import annotations

import numpy as np
import torch

from .backbones import FAST_FRAME_STRIDE
from .errors import ConfigError, DataError
from .pooling import gap_gsp
from .video import normalize_frames

SPATIAL_OUT_DIM = 4096
MOTION_OUT_DIM = 512

# smallest clip the motion stream accepts: 4 retained frames, so the
# temporal kernels see more signal than their own padding
MIN_MOTION_FRAMES = 8

DEFAULT_WINDOW = 64
DEFAULT_SPATIAL_BATCH = 8


def extract_spatial(frames, trunk, batch=DEFAULT_SPATIAL_BATCH):
    """(T, H, W, 3) uint8 frames -> (T, 4096) float32 pooled features."""
    if batch < 1:
        raise ConfigError(f"extract_spatial: batch must be >= 1, got {batch}")
    x = torch.from_numpy(normalize_frames(frames))
    chunks = []
    with torch.no_grad():
        for start in range(0, x.shape[0], batch):
            act = trunk(x[start:start + batch])
            chunks.append(gap_gsp(act))
    return torch.cat(chunks, dim=0).numpy().astype(np.float32, copy=False)


def _window_starts(n_positions, window):
    """Window starts covering [0, n): fixed hop, final window right-aligned.

    The final window overlaps the previous one when n is not a multiple of
    the window; callers keep only its uncovered tail, so every position is
    computed exactly once, always inside some full window.
    """
    if n_positions <= window:
        return [0]
    starts = list(range(0, n_positions - window + 1, window))
    if starts[-1] + window < n_positions:
        starts.append(n_positions - window)
    return starts


def extract_motion(frames, fast_pathway, window=DEFAULT_WINDOW):
    """(T, H, W, 3) uint8 frames -> (ceil(T/2), 512) float32 pooled features.

    Inference is clip-windowed: the sampled sequence is processed in windows
    of window // 2 positions with no overlap except a right-aligned final
    window, whose already-covered positions are discarded. Features near
    window edges see the zero temporal padding of their own window.
    """
    frames = np.asarray(frames)
    if window < 2 * FAST_FRAME_STRIDE:
        raise ConfigError(f"extract_motion: window must be >= {2 * FAST_FRAME_STRIDE}")
    t_total = frames.shape[0]
    if t_total < MIN_MOTION_FRAMES:
        raise DataError(
            f"extract_motion: clip has {t_total} frames, minimum is {MIN_MOTION_FRAMES}"
        )
    sampled = normalize_frames(frames[::FAST_FRAME_STRIDE])
    positions = sampled.shape[0]
    win = window // FAST_FRAME_STRIDE
    rows = [None] * positions
    with torch.no_grad():
        for start in _window_starts(positions, min(win, positions)):
            clip = torch.from_numpy(sampled[start:start + win])
            # (S, 3, H, W) -> (1, 3, S, H, W)
            act = fast_pathway(clip.permute(1, 0, 2, 3).unsqueeze(0))[0]
            pooled = gap_gsp(act.permute(1, 0, 2, 3))
            for i in range(pooled.shape[0]):
                if rows[start + i] is None:
                    rows[start + i] = pooled[i]
    return torch.stack(rows, dim=0).numpy().astype(np.float32, copy=False)
