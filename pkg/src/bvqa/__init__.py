"""Blind video quality assessment on precomputed feature tensors.

The package trains and evaluates a small temporal quality model over
per-frame video features: pairwise quality-aware pre-training losses, a
GRU head with hysteresis pooling, differentiable PLCC/SRCC ranking losses
on soft ranks, deterministic training/evaluation, and a binary tensor-file
plus JSON-manifest data layer, all on a minimal reverse-mode autodiff
engine.
"""

from . import autodiff, featureio, gradcheck, pretrain, ranking, temporal, training
from .errors import BvqaError, ConfigError, DataError, NumericError

__version__ = "0.1.0"

__all__ = [
    "autodiff",
    "featureio",
    "gradcheck",
    "pretrain",
    "ranking",
    "temporal",
    "training",
    "BvqaError",
    "ConfigError",
    "DataError",
    "NumericError",
    "__version__",
]
