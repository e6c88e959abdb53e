"""Pairwise pre-training objective, torch edition.

These mirror the float64 reference implementations in the training package;
the parity tests hold both sides to 1e-6 on shared inputs. Losses are
computed in float64 regardless of model dtype: predictions are cast up
before the loss, which costs nothing measurable and keeps the probability
arithmetic well inside that tolerance.
"""

from __future__ import annotations

import math

import torch

from .errors import DataError

DEFAULT_ETA = 0.025
DEFAULT_NU = 1.0
SIGMA_FLOOR = 1e-12
_PROB_SLACK = 1e-9


def pair_probability(mu_x, mu_y, sigma_x, sigma_y):
    """P(x preferred to y): Gaussian CDF of the scaled mean difference."""
    var = sigma_x * sigma_x + sigma_y * sigma_y
    return torch.special.ndtr((mu_x - mu_y) / torch.sqrt(var))


def pair_probability_value(mu_x, mu_y, sigma_x, sigma_y):
    """Float path for building ground-truth preference probabilities."""
    var = float(sigma_x) ** 2 + float(sigma_y) ** 2
    if var <= 0.0:
        raise DataError("pair_probability: both sigmas are zero")
    z = (float(mu_x) - float(mu_y)) / math.sqrt(var)
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def fidelity_loss(p_true, p_pred):
    """1 - sqrt(p*q) - sqrt((1-p)(1-q)), radicands clamped at zero."""
    for name, p in (("p_true", p_true), ("p_pred", p_pred)):
        if torch.any(p < -_PROB_SLACK) or torch.any(p > 1.0 + _PROB_SLACK):
            raise DataError(f"fidelity_loss: {name} outside [0, 1]")
    hit = torch.sqrt(torch.clamp(p_true * p_pred, min=0.0))
    miss = torch.sqrt(torch.clamp((1.0 - p_true) * (1.0 - p_pred), min=0.0))
    return 1.0 - (hit + miss)


def std_hinge_loss(g, sigma_pred_x, sigma_pred_y, eta=DEFAULT_ETA):
    """max(0, eta - g * (sigma_x - sigma_y)), g the true uncertainty ordering."""
    diff = sigma_pred_x - sigma_pred_y
    return torch.clamp(eta - g * diff, min=0.0)


def pair_batch_loss(p_true, g, mu_x, mu_y, sigma_x, sigma_y,
                    nu=DEFAULT_NU, eta=DEFAULT_ETA):
    """Mean fidelity + nu * mean hinge over a batch; all inputs 1-d tensors."""
    p_pred = pair_probability(mu_x, mu_y, sigma_x, sigma_y)
    fid = fidelity_loss(p_true, p_pred).mean()
    hinge = std_hinge_loss(g, sigma_x, sigma_y, eta=eta).mean()
    parts = {"fidelity": float(fid.detach()), "hinge": float(hinge.detach())}
    return fid + nu * hinge, parts
