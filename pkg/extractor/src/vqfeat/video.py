"""Video decoding and frame preparation."""

from __future__ import annotations

import numpy as np
import cv2

from .errors import DataError

# standard per-channel input scaling for image networks
IMAGE_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGE_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


def decode_frames(path):
    """Decode a video file to (T, H, W, 3) RGB uint8 at native resolution.

    Raises DataError when the container cannot be opened or holds no
    decodable frames.
    """
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise DataError(f"{path}: cannot open video")
    frames = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        frames.append(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
    cap.release()
    if not frames:
        raise DataError(f"{path}: no decodable frames")
    return np.stack(frames)


def normalize_frames(frames):
    """uint8 (T, H, W, 3) -> float32 (T, 3, H, W), scaled to the standard input range."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise DataError(f"normalize_frames: expected (T, H, W, 3), got {frames.shape}")
    x = frames.astype(np.float32) / 255.0
    x = (x - IMAGE_MEAN) / IMAGE_STD
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))
