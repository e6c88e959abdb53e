"""Spatial pooling of backbone activations.

Each temporal position's (C, H, W) map collapses to 2C numbers: the
per-channel mean over the H*W positions followed by the per-channel
population standard deviation. Computation stays in the input dtype, so
float32 activations pool in float32.
"""

from __future__ import annotations

import torch

from .errors import DataError


def gap_gsp(activations):
    """Pool (T, C, H, W) activations to (T, 2C): mean then population std."""
    if not isinstance(activations, torch.Tensor):
        activations = torch.as_tensor(activations)
    if activations.ndim != 4:
        raise DataError(
            f"gap_gsp: expected (T, C, H, W), got shape {tuple(activations.shape)}"
        )
    t, c, h, w = activations.shape
    if t < 1 or c < 1 or h * w < 1:
        raise DataError(f"gap_gsp: empty extent in shape {tuple(activations.shape)}")
    flat = activations.reshape(t, c, h * w)
    gap = flat.mean(dim=2)
    gsp = torch.std(flat, dim=2, correction=0)
    return torch.cat([gap, gsp], dim=1)
