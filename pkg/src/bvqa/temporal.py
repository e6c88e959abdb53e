"""Temporal quality head: feature reduction, GRU, and hysteresis pooling.

Per video, fused per-frame features (T, C) pass through a learned linear
reduction, a single-layer GRU, and a per-frame linear score head, giving
frame scores q (T,). Hysteresis pooling then mixes, per frame, a memory
component (the worst recent past score) with a softmin-weighted current
component over the near future, modeling that viewers punish quality drops
quickly and forgive recoveries slowly. The video score is the mean of the
pooled sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError

DEFAULT_TAU = 12
DEFAULT_BETA = 0.5
DEFAULT_REDUCED_DIM = 128
DEFAULT_HIDDEN_DIM = 32


@dataclass
class PoolingConfig:
    """Hysteresis pooling knobs: window tau (frames) and memory weight beta."""

    tau: int = DEFAULT_TAU
    beta: float = DEFAULT_BETA

    def validate(self):
        if not isinstance(self.tau, int) or self.tau < 1:
            raise ConfigError(f"pooling: tau must be an integer >= 1, got {self.tau!r}")
        if not (0.0 <= self.beta <= 1.0):
            raise ConfigError(f"pooling: beta must lie in [0, 1], got {self.beta!r}")
        return self


@dataclass
class TemporalHead:
    """Parameters of the per-video scoring head.

    GRU convention (single layer): for input x_t and previous hidden h,
        z = sigmoid(x W_z + h U_z + b_z)
        r = sigmoid(x W_r + h U_r + b_r)
        n = tanh(x W_n + (r * h) U_n + b_n)
        h_t = z * h + (1 - z) * n
    Input-side weights and biases are stored concatenated [z | r | n].
    """

    in_dim: int
    reduced_dim: int = DEFAULT_REDUCED_DIM
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, in_dim, reduced_dim=DEFAULT_REDUCED_DIM, hidden_dim=DEFAULT_HIDDEN_DIM, seed=0):
        rng = np.random.default_rng(seed)
        r, h = reduced_dim, hidden_dim

        def uniform(fan_in, shape):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        params = {
            "reduce.weight": ad.parameter(uniform(in_dim, (in_dim, r))),
            "reduce.bias": ad.parameter(np.zeros(r)),
            "gru.w_in": ad.parameter(uniform(r, (r, 3 * h))),
            "gru.b_in": ad.parameter(np.zeros(3 * h)),
            "gru.u_z": ad.parameter(uniform(h, (h, h))),
            "gru.u_r": ad.parameter(uniform(h, (h, h))),
            "gru.u_n": ad.parameter(uniform(h, (h, h))),
            "score.weight": ad.parameter(uniform(h, (h, 1))),
            "score.bias": ad.parameter(np.zeros(1)),
        }
        return cls(in_dim=in_dim, reduced_dim=r, hidden_dim=h, params=params)

    def parameters(self):
        return dict(self.params)


def gru_sequence(x, head):
    """Run the GRU over reduced features x (T, R); return hidden states (T, H)."""
    h_dim = head.hidden_dim
    xw = ad.add_bias(ad.matmul(x, head.params["gru.w_in"]), head.params["gru.b_in"])
    h = ad.constant(np.zeros((1, h_dim)))
    states = []
    t_len = x.shape[0]
    for t in range(t_len):
        row = ad.index(xw, (slice(t, t + 1), slice(None)))
        xz = ad.index(row, (slice(None), slice(0, h_dim)))
        xr = ad.index(row, (slice(None), slice(h_dim, 2 * h_dim)))
        xn = ad.index(row, (slice(None), slice(2 * h_dim, 3 * h_dim)))
        z = ad.sigmoid(ad.add(xz, ad.matmul(h, head.params["gru.u_z"])))
        r = ad.sigmoid(ad.add(xr, ad.matmul(h, head.params["gru.u_r"])))
        n = ad.tanh(ad.add(xn, ad.matmul(ad.mul(r, h), head.params["gru.u_n"])))
        h = ad.add(ad.mul(z, h), ad.mul(ad.sub(1.0, z), n))
        states.append(h)
    return ad.concat(states, axis=0)


def frame_scores(features, head):
    """Map per-frame features (T, C) to frame quality scores q (T,)."""
    feats = features if isinstance(features, ad.Tensor) else ad.constant(
        np.asarray(features, dtype=np.float64)
    )
    if feats.ndim != 2:
        raise DataError(f"frame_scores: expected (T, C) features, got shape {feats.shape}")
    if feats.shape[1] != head.in_dim:
        raise DataError(
            f"frame_scores: head expects {head.in_dim} channels, got {feats.shape[1]}"
        )
    if feats.shape[0] < 1:
        raise DataError("frame_scores: empty sequence")
    reduced = ad.add_bias(
        ad.matmul(feats, head.params["reduce.weight"]), head.params["reduce.bias"]
    )
    hidden = gru_sequence(reduced, head)
    q = ad.add_bias(ad.matmul(hidden, head.params["score.weight"]), head.params["score.bias"])
    return ad.reshape(q, (feats.shape[0],))


def _softmin_combine(q_window):
    """Softmin-weighted average of a score window, numerically stabilized.

    Weights are exp(-q_k) normalized over the window; subtracting the
    window min (as a constant shift) before exponentiation leaves the
    weights mathematically unchanged while bounding the exponents.
    """
    shift = float(np.min(q_window.data))
    neg = ad.sub(shift, q_window)  # -(q - min), exponents in (-inf, 0]
    w = ad.exp(neg)
    return ad.div(ad.tensor_sum(ad.mul(w, q_window)), ad.tensor_sum(w))


def hysteresis_pool(q, config=None):
    """Pool frame scores q (T,) into per-frame pooled scores q' (T,).

    For frame t (0-based here, with window tau):
      memory m_t: min over the previous tau frames (q_t itself for t == 0);
      current c_t: softmin-weighted average over frames t .. t+tau (clipped
        to the end), emphasizing low upcoming scores;
      q'_t = beta * m_t + (1 - beta) * c_t.

    The min subgradient routes to the first attaining frame.
    """
    config = (config or PoolingConfig()).validate()
    if not isinstance(q, ad.Tensor):
        q = ad.constant(np.asarray(q, dtype=np.float64))
    if q.ndim != 1 or q.shape[0] < 1:
        raise DataError(f"hysteresis_pool: expected non-empty (T,) scores, got {q.shape}")
    t_len = q.shape[0]
    tau, beta = config.tau, config.beta
    pooled = []
    for t in range(t_len):
        if t == 0:
            memory = ad.index(q, 0)
        else:
            lo = max(0, t - tau)
            memory = ad.tensor_min(ad.index(q, slice(lo, t)))
        hi = min(t_len, t + tau + 1)
        current = _softmin_combine(ad.index(q, slice(t, hi)))
        pooled.append(
            ad.add(ad.mul(memory, float(beta)), ad.mul(current, float(1.0 - beta)))
        )
    return ad.stack(pooled, axis=0)


def video_score(pooled):
    """Video-level score: mean of the pooled per-frame scores."""
    return ad.tensor_mean(pooled)


def score_video(features, head, config=None):
    """Convenience: features (T, C) -> scalar video score Tensor."""
    q = frame_scores(features, head)
    return video_score(hysteresis_pool(q, config))
