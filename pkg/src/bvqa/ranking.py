"""List-wise ranking losses over per-video scores.

Three pieces:
  * a learned 4-parameter logistic map from raw video scores to the MOS
    range, trained jointly with the model;
  * a differentiable PLCC loss (1 - r) / 2 on the mapped scores;
  * a differentiable SRCC loss on soft ranks; the soft rank is a Euclidean
    projection of -scores/epsilon onto the permutahedron of (1..N), which
    in the sorted frame reduces to isotonic regression, solved exactly by
    pool-adjacent-violators.

Gradients of the projection are block averages: within each tied block the
Jacobian is I minus the block-centering matrix, scaled by -1/epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, NumericError

DEFAULT_EPSILON = 1.0
DEFAULT_LAMBDA = 1.0
_VAR_GUARD = 1e-12


@dataclass
class SoftRankConfig:
    """Regularization strength for soft ranking (smaller = closer to hard ranks)."""

    epsilon: float = DEFAULT_EPSILON

    def validate(self):
        if not (self.epsilon > 0.0):
            raise ConfigError(f"soft_rank: epsilon must be > 0, got {self.epsilon!r}")
        return self


class LogisticParams:
    """Per-database 4-parameter logistic map gamma3*sigmoid(g1*q + g2) + gamma4."""

    names = ("gamma1", "gamma2", "gamma3", "gamma4")

    def __init__(self, gamma1=1.0, gamma2=0.0, gamma3=1.0, gamma4=0.0):
        self.gamma1 = ad.parameter(float(gamma1))
        self.gamma2 = ad.parameter(float(gamma2))
        self.gamma3 = ad.parameter(float(gamma3))
        self.gamma4 = ad.parameter(float(gamma4))

    @classmethod
    def from_tensors(cls, gamma1, gamma2, gamma3, gamma4):
        obj = cls.__new__(cls)
        obj.gamma1, obj.gamma2, obj.gamma3, obj.gamma4 = gamma1, gamma2, gamma3, gamma4
        return obj

    def parameters(self):
        return {name: getattr(self, name) for name in self.names}

    def values(self):
        return tuple(float(getattr(self, name).data) for name in self.names)


def logistic_map(q, params):
    """Apply the trainable logistic: gamma3 * sigmoid(gamma1*q + gamma2) + gamma4."""
    if not isinstance(q, ad.Tensor):
        q = ad.constant(np.asarray(q, dtype=np.float64))
    inner = ad.add(ad.mul(q, params.gamma1), params.gamma2)
    return ad.add(ad.mul(ad.sigmoid(inner), params.gamma3), params.gamma4)


def reparameterize_standard(gp1, gp2, gp3, gp4):
    """Convert the conventional evaluation-time logistic

        f(q) = (gp3 - gp4) / (1 + exp(-(q - gp1) / |gp2|)) + gp4

    (gp1 midpoint, gp2 scale, gp3 upper asymptote, gp4 lower) into the
    trainable form's (gamma1..gamma4):

        gamma1 = 1/|gp2|, gamma2 = -gp1/|gp2|, gamma3 = gp3 - gp4, gamma4 = gp4.

    gp2 == 0 is a domain error.
    """
    gp1, gp2, gp3, gp4 = float(gp1), float(gp2), float(gp3), float(gp4)
    if gp2 == 0.0:
        raise NumericError("reparameterize_standard: scale parameter is zero")
    s = abs(gp2)
    return (1.0 / s, -gp1 / s, gp3 - gp4, gp4)


def eval_standard_logistic(q, gp1, gp2, gp3, gp4):
    """Evaluate the conventional 4-parameter logistic on a numpy array."""
    q = np.asarray(q, dtype=np.float64)
    if gp2 == 0.0:
        raise NumericError("standard logistic: scale parameter is zero")
    z = (q - gp1) / abs(gp2)
    # sigmoid via tanh keeps large |z| stable
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    return (gp3 - gp4) * sig + gp4


def _pearson_tensor(x, y):
    """Differentiable Pearson correlation of two equal-length vectors.

    Variance square roots carry a 1e-12 guard so ties-with-noise do not
    divide by a hard zero; exact zero variance is rejected upstream.
    """
    xc = ad.sub(x, ad.tensor_mean(x))
    yc = ad.sub(y, ad.tensor_mean(y))
    num = ad.tensor_sum(ad.mul(xc, yc))
    vx = ad.add(ad.tensor_sum(ad.mul(xc, xc)), _VAR_GUARD)
    vy = ad.add(ad.tensor_sum(ad.mul(yc, yc)), _VAR_GUARD)
    return ad.div(num, ad.mul(ad.sqrt(vx), ad.sqrt(vy)))


def _check_lengths(pred, target, name):
    if pred.ndim != 1:
        raise DataError(f"{name}: predictions must be a vector, got shape {pred.shape}")
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 1 or target.shape[0] != pred.shape[0]:
        raise DataError(
            f"{name}: target shape {target.shape} does not match predictions {pred.shape}"
        )
    if pred.shape[0] < 2:
        raise DataError(f"{name}: need at least 2 items, got {pred.shape[0]}")
    return target


def plcc_loss(q_mapped, q_true):
    """(1 - PearsonCorrelation(q_mapped, q_true)) / 2, in [0, 1]."""
    if not isinstance(q_mapped, ad.Tensor):
        q_mapped = ad.constant(np.asarray(q_mapped, dtype=np.float64))
    q_true = _check_lengths(q_mapped, q_true, "plcc_loss")
    if np.ptp(q_true) == 0.0:
        raise DataError("plcc_loss: ground-truth scores are constant")
    if np.ptp(q_mapped.data) == 0.0:
        raise DataError("plcc_loss: predictions are constant (zero variance)")
    r = _pearson_tensor(q_mapped, ad.constant(q_true))
    return ad.mul(ad.sub(1.0, r), 0.5)


def hard_ranks_descending(values):
    """Descending ranks 1..N (best = 1); ties broken by original index."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(-values, kind="stable")
    ranks = np.empty(values.shape[0], dtype=np.float64)
    ranks[order] = np.arange(1, values.shape[0] + 1, dtype=np.float64)
    return ranks


def average_ranks(values):
    """Ascending fractional ranks with ties sharing their average rank."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    svals = values[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and svals[j + 1] == svals[i]:
            j += 1
        avg = 0.5 * (i + j) + 1.0
        ranks[order[i : j + 1]] = avg
        i = j + 1
    return ranks


def pav_decreasing(values):
    """Best non-increasing fit to ``values`` in least squares.

    Pool-adjacent-violators: walk left to right maintaining a stack of
    blocks (sum, count); merge whenever a later block's mean exceeds an
    earlier one's. Returns (fit, blocks) where blocks are (start, end)
    index ranges sharing one fitted value.
    """
    v = np.asarray(values, dtype=np.float64)
    n = v.shape[0]
    if n == 0:
        raise DataError("pav_decreasing: empty input")
    sums = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    starts = np.empty(n, dtype=np.int64)
    top = -1
    for i in range(n):
        top += 1
        sums[top] = v[i]
        counts[top] = 1
        starts[top] = i
        # non-increasing constraint violated when a later mean is larger
        while top > 0 and sums[top] * counts[top - 1] > sums[top - 1] * counts[top]:
            sums[top - 1] += sums[top]
            counts[top - 1] += counts[top]
            top -= 1
    fit = np.empty(n)
    blocks = []
    for b in range(top + 1):
        lo = starts[b]
        hi = lo + counts[b]
        fit[lo:hi] = sums[b] / counts[b]
        blocks.append((int(lo), int(hi)))
    return fit, blocks


def _project_permutahedron_sorted(z_sorted):
    """Project a descending-sorted vector onto the permutahedron of (1..N).

    The projection of z is z - y* where y* is the non-increasing isotonic
    fit of z - rho and rho = (N, N-1, ..., 1). Returns (projection, blocks).
    """
    n = z_sorted.shape[0]
    rho = np.arange(n, 0, -1, dtype=np.float64)
    fit, blocks = pav_decreasing(z_sorted - rho)
    return z_sorted - fit, blocks


def soft_rank(scores, config=None):
    """Differentiable ranks of ``scores``, descending (best score -> rank 1).

    Computed as the Euclidean projection of -scores/epsilon onto the
    permutahedron of (1, .., N). As epsilon -> 0 the result approaches the
    hard descending ranks; larger epsilon shrinks ranks toward the mean
    (N+1)/2. Components always sum to N(N+1)/2 and permuting the inputs
    permutes the outputs.
    """
    config = (config or SoftRankConfig()).validate()
    if not isinstance(scores, ad.Tensor):
        scores = ad.constant(np.asarray(scores, dtype=np.float64))
    if scores.ndim != 1 or scores.shape[0] < 1:
        raise DataError(f"soft_rank: expected non-empty vector, got shape {scores.shape}")
    eps = config.epsilon
    z = -scores.data / eps
    order = np.argsort(-z, kind="stable")
    proj_sorted, blocks = _project_permutahedron_sorted(z[order])
    ranks = np.empty_like(proj_sorted)
    ranks[order] = proj_sorted
    out = ad._wrap(ranks)

    def bwd(g):
        gs = g[order]
        vs = np.empty_like(gs)
        for lo, hi in blocks:
            blk = gs[lo:hi]
            vs[lo:hi] = blk - blk.mean()
        grad = np.empty_like(vs)
        grad[order] = vs
        ad._accumulate(scores, grad * (-1.0 / eps))

    return ad._record(out, (scores,), bwd)


def srcc_loss(q_pred, q_true, config=None):
    """1 - PearsonCorrelation(soft ranks of predictions, hard ranks of truth).

    The ground-truth side uses hard descending ranks with index tie-break
    (constants under the gradient); the prediction side stays differentiable
    through the soft ranks.
    """
    if not isinstance(q_pred, ad.Tensor):
        q_pred = ad.constant(np.asarray(q_pred, dtype=np.float64))
    q_true = _check_lengths(q_pred, q_true, "srcc_loss")
    if np.ptp(q_true) == 0.0:
        raise DataError("srcc_loss: ground-truth scores are constant")
    r_pred = soft_rank(q_pred, config)
    if np.ptp(r_pred.data) == 0.0:
        raise DataError("srcc_loss: predicted ranks are constant (zero variance)")
    r_true = ad.constant(hard_ranks_descending(q_true))
    return ad.sub(1.0, _pearson_tensor(r_pred, r_true))


def mixed_loss(q_pred, q_true, logistic, lam=DEFAULT_LAMBDA, config=None):
    """PLCC loss on logistic-mapped scores plus lam * SRCC loss on raw scores.

    lam == 0 short-circuits to the PLCC term alone.
    """
    mapped = logistic_map(q_pred, logistic)
    plcc = plcc_loss(mapped, q_true)
    if lam == 0.0:
        return plcc
    return ad.add(plcc, ad.mul(srcc_loss(q_pred, q_true, config), float(lam)))
