"""Backbone construction for the two feature streams.

Spatial stream: a standard residual 50-layer image network truncated after
its last convolutional stage, emitting 2048-channel maps that pool to 4096
features per frame.

Motion stream: the fast pathway of a two-pathway 3D architecture. The
reference slow pathway (not built here) would sample frames at temporal
stride 8; the fast pathway runs 4x faster (stride 2) with 1/8 of the slow
channel widths, ending at 256 channels that pool to 512 features per
retained frame. Temporal resolution is preserved end to end, so a clip of S
sampled frames yields S feature rows.

No pretrained weights ship with this environment, so both backbones
initialize from a fixed seed. Shapes, strides, pooling, and determinism are
exactly those of a pretrained run; only the learned filters differ.
"""

from __future__ import annotations

import torch
from torch import nn
import torchvision

SPATIAL_CHANNELS = 2048
MOTION_CHANNELS = 256

SLOW_TEMPORAL_STRIDE = 8
FAST_SPEED_RATIO = 4
FAST_CHANNEL_FRACTION = 0.125
# frames kept for the motion stream: every (8 / 4) = 2nd frame
FAST_FRAME_STRIDE = SLOW_TEMPORAL_STRIDE // FAST_SPEED_RATIO

# 1/8 of the reference slow widths (64, 256, 512, 1024, 2048)
_FAST_WIDTHS = (8, 32, 64, 128, 256)


def build_spatial_trunk(seed=0):
    """Residual-50 trunk up to the last convolution, eval mode, (B,3,H,W) -> (B,2048,h,w)."""
    torch.manual_seed(seed)
    m = torchvision.models.resnet50(weights=None)
    trunk = nn.Sequential(
        m.conv1, m.bn1, m.relu, m.maxpool, m.layer1, m.layer2, m.layer3, m.layer4
    )
    trunk.eval()
    for p in trunk.parameters():
        p.requires_grad_(False)
    return trunk


class FastPathway(nn.Module):
    """Minimal fast-pathway 3D convnet: full temporal resolution, 256 channels out.

    Stem keeps time (kernel 5, stride 1) and halves space; each stage keeps
    time (kernel 3, stride 1) and halves space again. Spatial extent can
    shrink to 1x1 without error; temporal length never changes.
    """

    def __init__(self, seed=0):
        super().__init__()
        torch.manual_seed(seed)
        stem_w, *stage_ws = _FAST_WIDTHS
        layers = [
            nn.Conv3d(3, stem_w, kernel_size=(5, 7, 7), stride=(1, 2, 2),
                      padding=(2, 3, 3), bias=False),
            nn.BatchNorm3d(stem_w),
            nn.ReLU(inplace=True),
            nn.MaxPool3d(kernel_size=(1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)),
        ]
        prev = stem_w
        for width in stage_ws:
            layers += [
                nn.Conv3d(prev, width, kernel_size=(3, 3, 3), stride=(1, 2, 2),
                          padding=(1, 1, 1), bias=False),
                nn.BatchNorm3d(width),
                nn.ReLU(inplace=True),
            ]
            prev = width
        self.net = nn.Sequential(*layers)
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        """(B, 3, S, H, W) -> (B, 256, S, h, w)."""
        return self.net(x)


def build_fast_pathway(seed=0):
    return FastPathway(seed=seed)
