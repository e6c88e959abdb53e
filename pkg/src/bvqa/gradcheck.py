"""Finite-difference gradient verification.

Central differences with step h=1e-5 on float64 give a truncation error of
order h^2 = 1e-10, far below the 1e-4 relative tolerance used to compare
against reverse-mode gradients. Relative error uses a floored denominator
max(|fd|, |ad|, 1e-2) so near-zero gradients are compared absolutely.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import NumericError

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4
_DENOM_FLOOR = 1e-2


def numeric_gradient(fn, arrays, step=DEFAULT_STEP):
    """Central-difference gradient of scalar ``fn(*arrays)`` w.r.t. each array.

    ``fn`` must accept plain float64 numpy arrays and return a python float.
    """
    grads = []
    for k, base in enumerate(arrays):
        base = np.asarray(base, dtype=np.float64)
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = fn(*arrays)
            flat[i] = orig - step
            f_minus = fn(*arrays)
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * step)
        grads.append(g)
    return grads


def max_relative_error(ad_grad, fd_grad):
    ad_grad = np.asarray(ad_grad, dtype=np.float64)
    fd_grad = np.asarray(fd_grad, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(ad_grad), np.abs(fd_grad)), _DENOM_FLOOR)
    return float(np.max(np.abs(ad_grad - fd_grad) / denom))


def check_gradients(build_loss, arrays, step=DEFAULT_STEP, tol=DEFAULT_TOL):
    """Compare reverse-mode gradients against central differences.

    ``build_loss(*tensors)`` maps parameter Tensors to a scalar Tensor.
    Returns the worst relative error across all inputs; raises NumericError
    when it exceeds ``tol`` (pass tol=None to only measure).
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    params = [ad.parameter(a.copy()) for a in arrays]
    loss = build_loss(*params)
    ad.backward(loss)
    ad_grads = [
        p.grad if p.grad is not None else np.zeros_like(p.data) for p in params
    ]

    def scalar_fn(*arrs):
        with ad.no_record():
            out = build_loss(*[ad.constant(a) for a in arrs])
        return float(out.data)

    fd_grads = numeric_gradient(scalar_fn, arrays, step=step)
    worst = 0.0
    for a_g, f_g in zip(ad_grads, fd_grads):
        worst = max(worst, max_relative_error(a_g, f_g))
    if tol is not None and worst > tol:
        raise NumericError(
            f"gradient check failed: max relative error {worst:.3e} > {tol:.1e}"
        )
    return worst


def _spread(rng, n, low, high, min_gap):
    """Draw n values in [low, high] with pairwise gaps >= min_gap (rejection)."""
    for _ in range(1000):
        vals = rng.uniform(low, high, size=n)
        s = np.sort(vals)
        if n < 2 or np.min(np.diff(s)) >= min_gap:
            return vals
    raise NumericError("could not draw well-separated values")


def op_battery(seed=0, cases=3):
    """Gradient checks for every differentiable op and loss; yields (name, err).

    Inputs are drawn away from non-smooth points (ties for min/ranking,
    kinks for hinge/clamp), since finite differences are meaningless across
    a kink.
    """
    from . import pretrain as pt
    from . import ranking as rk
    from . import temporal as tp

    def vec(rng, n=5, lo=-2.0, hi=2.0):
        return rng.uniform(lo, hi, size=n)

    entries = []

    def entry(name, builder):
        entries.append((name, builder))

    def weighted(op):
        def case(rng):
            w = vec(rng)
            return (lambda a, b: ad.tensor_sum(ad.mul(op(a, b), ad.constant(w))),
                    [vec(rng), vec(rng)])
        return case

    entry("add", weighted(ad.add))
    entry("sub", weighted(ad.sub))
    entry("mul", lambda rng: (lambda a, b: ad.tensor_sum(ad.mul(a, b)),
                              [vec(rng), vec(rng)]))
    entry("div", lambda rng: (lambda a, b: ad.tensor_sum(ad.div(a, b)),
                              [vec(rng), vec(rng, lo=0.5, hi=2.0)]))
    entry("scalar_broadcast", lambda rng: (
        lambda a, s: ad.tensor_sum(ad.mul(ad.add(a, s), ad.sub(a, s))),
        [vec(rng), np.array(rng.uniform(-1, 1))]))
    entry("neg_exp", lambda rng: (lambda a: ad.tensor_sum(ad.exp(ad.neg(a))), [vec(rng)]))
    entry("log", lambda rng: (lambda a: ad.tensor_sum(ad.log(a)), [vec(rng, lo=0.2, hi=3.0)]))
    entry("sqrt", lambda rng: (lambda a: ad.tensor_sum(ad.sqrt(a)), [vec(rng, lo=0.1, hi=3.0)]))
    entry("maximum", lambda rng: (lambda a: ad.tensor_sum(ad.maximum(a, 0.0)),
                                  [_spread(rng, 6, -2.0, 2.0, 1e-3)]))
    entry("sigmoid", lambda rng: (lambda a: ad.tensor_sum(ad.sigmoid(a)), [vec(rng)]))
    entry("tanh", lambda rng: (lambda a: ad.tensor_sum(ad.tanh(a)), [vec(rng)]))
    entry("softplus", lambda rng: (lambda a: ad.tensor_sum(ad.softplus(a)), [vec(rng)]))
    entry("normal_cdf", lambda rng: (lambda a: ad.tensor_sum(ad.normal_cdf(a)), [vec(rng)]))
    entry("matmul", lambda rng: (
        lambda a, b: ad.tensor_sum(ad.matmul(a, b)),
        [rng.uniform(-1, 1, size=(3, 4)), rng.uniform(-1, 1, size=(4, 2))]))
    entry("add_bias", lambda rng: (
        lambda m, b: ad.tensor_sum(ad.tanh(ad.add_bias(m, b))),
        [rng.uniform(-1, 1, size=(3, 4)), rng.uniform(-1, 1, size=4)]))
    entry("mean_axis", lambda rng: (
        lambda m: ad.tensor_sum(ad.mul(ad.tensor_mean(m, axis=0), ad.tensor_mean(m, axis=0))),
        [rng.uniform(-1, 1, size=(3, 4))]))
    entry("std", lambda rng: (lambda m: ad.add(ad.tensor_std(m),
                                               ad.tensor_sum(ad.tensor_std(m, axis=1))),
                              [rng.uniform(-1, 1, size=(3, 4))]))
    entry("min", lambda rng: (
        lambda a: ad.add(ad.tensor_min(a), ad.tensor_sum(ad.exp(a))),
        [_spread(rng, 6, -2.0, 2.0, 1e-3)]))
    entry("index_concat_stack", lambda rng: (
        lambda a, b: ad.tensor_sum(ad.mul(
            ad.concat([ad.index(a, slice(0, 3)), b]),
            ad.stack([ad.index(a, 0), ad.index(a, 1), ad.index(b, 0),
                      ad.index(b, 1), ad.index(b, 2), ad.index(a, 2)]))),
        [vec(rng), vec(rng, n=3)]))
    entry("reshape", lambda rng: (
        lambda m: ad.tensor_sum(ad.mul(ad.reshape(m, (6,)), ad.reshape(m, (6,)))),
        [rng.uniform(-1, 1, size=(2, 3))]))

    def pretrain_losses(rng):
        n = 4
        mu_x, mu_y = vec(rng, n), vec(rng, n)
        raw_x, raw_y = vec(rng, n), vec(rng, n)
        p_true = rng.uniform(0.05, 0.95, size=n)
        g = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)

        def build(mx, my, rx, ry):
            sx = ad.add(ad.softplus(rx), 1e-12)
            sy = ad.add(ad.softplus(ry), 1e-12)
            p_w = pt.pair_probability(mx, my, sx, sy)
            fid = ad.tensor_mean(pt.fidelity_loss(ad.constant(p_true), p_w))
            hinge = ad.tensor_mean(
                ad.maximum(ad.sub(0.025, ad.mul(ad.sub(sx, sy), ad.constant(g))), 0.0)
            )
            return ad.add(fid, hinge)

        return build, [mu_x, mu_y, raw_x, raw_y]

    entry("pretrain_losses", pretrain_losses)

    def plcc_logistic(rng):
        n = 6
        q = _spread(rng, n, -1.5, 1.5, 0.05)
        y = _spread(rng, n, 1.0, 5.0, 0.05)

        def build(qt, g1, g2, g3, g4):
            params = rk.LogisticParams.from_tensors(g1, g2, g3, g4)
            return rk.plcc_loss(rk.logistic_map(qt, params), y)

        return build, [q, np.array(1.2), np.array(0.3), np.array(2.0), np.array(1.0)]

    entry("plcc_logistic", plcc_logistic)

    def srcc(rng):
        n = 6
        q = _spread(rng, n, -1.5, 1.5, 0.1)
        y = _spread(rng, n, 1.0, 5.0, 0.05)
        cfg = rk.SoftRankConfig(epsilon=0.5)
        return (lambda qt: rk.srcc_loss(qt, y, cfg)), [q]

    entry("srcc", srcc)

    def mixed(rng):
        n = 6
        q = _spread(rng, n, -1.5, 1.5, 0.1)
        y = _spread(rng, n, 1.0, 5.0, 0.05)
        cfg = rk.SoftRankConfig(epsilon=0.8)

        def build(qt, g1, g2, g3, g4):
            params = rk.LogisticParams.from_tensors(g1, g2, g3, g4)
            return rk.mixed_loss(qt, y, params, lam=1.0, config=cfg)

        return build, [q, np.array(0.9), np.array(-0.2), np.array(3.0), np.array(1.0)]

    entry("mixed", mixed)

    def hysteresis(rng):
        t_len = int(rng.integers(4, 9))
        q = _spread(rng, t_len, -1.0, 1.0, 1e-3)
        cfg = tp.PoolingConfig(tau=int(rng.integers(1, 4)), beta=0.5)
        return (lambda qt: tp.video_score(tp.hysteresis_pool(qt, cfg))), [q]

    entry("hysteresis", hysteresis)

    def full_head(rng):
        in_dim, red, hid, t_len = 5, 4, 3, 4
        head = tp.TemporalHead.init(in_dim, reduced_dim=red, hidden_dim=hid,
                                    seed=int(rng.integers(0, 2**31)))
        names = sorted(head.params)
        feats = rng.uniform(-1, 1, size=(t_len, in_dim))
        cfg = tp.PoolingConfig(tau=2, beta=0.5)

        def build(*tensors):
            h = tp.TemporalHead(in_dim=in_dim, reduced_dim=red, hidden_dim=hid,
                                params=dict(zip(names, tensors[:-1])))
            return tp.video_score(tp.hysteresis_pool(tp.frame_scores(tensors[-1], h), cfg))

        arrays = [head.params[n].data.copy() for n in names] + [feats]
        return build, arrays

    entry("full_head", full_head)

    for i, (name, builder) in enumerate(entries):
        worst = 0.0
        for c in range(cases):
            rng = np.random.default_rng([seed, i, c])
            build, arrays = builder(rng)
            worst = max(worst, check_gradients(build, arrays, tol=None))
        yield name, worst

