"""Quality-aware pairwise pre-training.

A pair of images with subjective Gaussians (mu_x, sigma_x), (mu_y, sigma_y)
has a ground-truth probability that x beats y:

    p = Phi((mu_x - mu_y) / sqrt(sigma_x^2 + sigma_y^2))

The model predicts per-image (mu_w, sigma_w) with sigma_w > 0 by
construction, forms the analogous probability p_w, and is trained with a
fidelity loss between p and p_w plus a hinge on the predicted sigma gap
that pushes the predicted uncertainty ordering to match the ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from . import autodiff as ad
from .errors import DataError, NumericError
from .featureio import read_tensor

DEFAULT_ETA = 0.025
DEFAULT_NU = 1.0
_SIGMA_FLOOR = 1e-12
_PROB_SLACK = 1e-9


def pair_probability(mu_x, mu_y, sigma_x, sigma_y):
    """P(x preferred to y) under the Thurstone case-V style model.

    Accepts floats (returns float) or Tensors (returns Tensor, differentiable).
    Both sigmas zero is a domain error for floats; the tensor path raises
    through the division guard.
    """
    if any(isinstance(v, ad.Tensor) for v in (mu_x, mu_y, sigma_x, sigma_y)):
        var = ad.add(ad.mul(sigma_x, sigma_x), ad.mul(sigma_y, sigma_y))
        return ad.normal_cdf(ad.div(ad.sub(mu_x, mu_y), ad.sqrt(var)))
    var = float(sigma_x) ** 2 + float(sigma_y) ** 2
    if var <= 0.0:
        raise NumericError("pair_probability: both sigmas are zero")
    return float(special.ndtr((float(mu_x) - float(mu_y)) / math.sqrt(var)))


def _validate_probability(value, name):
    arr = np.asarray(value, dtype=np.float64)
    if np.any(arr < -_PROB_SLACK) or np.any(arr > 1.0 + _PROB_SLACK):
        raise NumericError(f"fidelity_loss: {name} outside [0, 1]")


def fidelity_loss(p_true, p_pred):
    """1 - sqrt(p*q) - sqrt((1-p)(1-q)); zero iff p == q, symmetric, >= 0.

    Inputs may drift a hair outside [0, 1] from rounding; values beyond a
    1e-9 slack are rejected, and the radicands are clamped at zero so the
    square roots stay in-domain.
    """
    tensor_path = isinstance(p_true, ad.Tensor) or isinstance(p_pred, ad.Tensor)
    _validate_probability(p_true.data if isinstance(p_true, ad.Tensor) else p_true, "p_true")
    _validate_probability(p_pred.data if isinstance(p_pred, ad.Tensor) else p_pred, "p_pred")
    if not tensor_path:
        p, q = float(p_true), float(p_pred)
        hit = math.sqrt(max(p * q, 0.0))
        miss = math.sqrt(max((1.0 - p) * (1.0 - q), 0.0))
        # summing the overlap terms before the final subtraction keeps
        # complement symmetry bit-exact (float addition commutes)
        return 1.0 - (hit + miss)
    p = p_true if isinstance(p_true, ad.Tensor) else ad.constant(p_true)
    q = p_pred if isinstance(p_pred, ad.Tensor) else ad.constant(p_pred)
    hit = ad.sqrt(ad.maximum(ad.mul(p, q), 0.0))
    miss = ad.sqrt(ad.maximum(ad.mul(ad.sub(1.0, p), ad.sub(1.0, q)), 0.0))
    return ad.sub(1.0, ad.add(hit, miss))


def std_hinge_loss(sigma_true_x, sigma_true_y, sigma_pred_x, sigma_pred_y, eta=DEFAULT_ETA):
    """max(0, eta - g * (sigma_w(x) - sigma_w(y))) with g = sign(sigma_x - sigma_y).

    Gradients flow only through the predicted sigmas. Pairs with equal true
    sigmas carry no ordering information and are rejected (the sampler is
    expected to have filtered them).
    """
    g = float(np.sign(float(sigma_true_x) - float(sigma_true_y)))
    if g == 0.0:
        raise DataError("std_hinge_loss: equal true sigmas, pair should have been filtered")
    diff = ad.sub(sigma_pred_x, sigma_pred_y)
    return ad.maximum(ad.sub(float(eta), ad.mul(diff, g)), 0.0)


@dataclass
class PairSample:
    """One training pair: two feature vectors plus subjective statistics."""

    feat_x: np.ndarray
    feat_y: np.ndarray
    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float
    p: float
    g: float
    id_x: str = ""
    id_y: str = ""

    @classmethod
    def from_truth(cls, feat_x, feat_y, mu_x, mu_y, sigma_x, sigma_y, id_x="", id_y=""):
        """Build a sample, deriving p and g from the subjective Gaussians."""
        if sigma_x == sigma_y:
            raise DataError(
                f"pair ({id_x!r}, {id_y!r}): equal sigmas carry no uncertainty ordering"
            )
        p = pair_probability(mu_x, mu_y, sigma_x, sigma_y)
        g = float(np.sign(sigma_x - sigma_y))
        return cls(
            feat_x=np.asarray(feat_x, dtype=np.float64),
            feat_y=np.asarray(feat_y, dtype=np.float64),
            mu_x=float(mu_x),
            mu_y=float(mu_y),
            sigma_x=float(sigma_x),
            sigma_y=float(sigma_y),
            p=p,
            g=g,
            id_x=id_x,
            id_y=id_y,
        )

    def validate(self):
        if not (0.0 <= self.p <= 1.0):
            raise DataError(f"pair ({self.id_x!r}, {self.id_y!r}): p outside [0, 1]")
        if self.g not in (-1.0, 1.0):
            raise DataError(f"pair ({self.id_x!r}, {self.id_y!r}): g must be +-1")
        if self.feat_x.shape != self.feat_y.shape or self.feat_x.ndim != 1:
            raise DataError(
                f"pair ({self.id_x!r}, {self.id_y!r}): feature vectors must be 1-d, same length"
            )
        return self


@dataclass
class PairwiseQualityModel:
    """Small MLP trunk with (mu, sigma) heads over fixed feature vectors.

    sigma is softplus of the raw head output plus a tiny floor, so it is
    strictly positive for any parameter values.
    """

    in_dim: int
    hidden_dims: tuple = (32, 16)
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, in_dim, hidden_dims=(32, 16), seed=0):
        rng = np.random.default_rng(seed)
        params = {}
        prev = in_dim
        for i, h in enumerate(hidden_dims):
            bound = 1.0 / math.sqrt(prev)
            params[f"trunk.{i}.weight"] = ad.parameter(
                rng.uniform(-bound, bound, size=(prev, h))
            )
            params[f"trunk.{i}.bias"] = ad.parameter(np.zeros(h))
            prev = h
        bound = 1.0 / math.sqrt(prev)
        params["mu.weight"] = ad.parameter(rng.uniform(-bound, bound, size=(prev, 1)))
        params["mu.bias"] = ad.parameter(np.zeros(1))
        params["sigma.weight"] = ad.parameter(rng.uniform(-bound, bound, size=(prev, 1)))
        params["sigma.bias"] = ad.parameter(np.zeros(1))
        return cls(in_dim=in_dim, hidden_dims=tuple(hidden_dims), params=params)

    def parameters(self):
        return dict(self.params)

    def forward(self, feats):
        """Map (B, D) features to mu (B,) and sigma (B,) tensors."""
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.in_dim:
            raise DataError(
                f"model expects (B, {self.in_dim}) features, got shape {feats.shape}"
            )
        h = ad.constant(feats)
        for i in range(len(self.hidden_dims)):
            h = ad.add_bias(
                ad.matmul(h, self.params[f"trunk.{i}.weight"]),
                self.params[f"trunk.{i}.bias"],
            )
            h = ad.tanh(h)
        mu = ad.add_bias(ad.matmul(h, self.params["mu.weight"]), self.params["mu.bias"])
        raw = ad.add_bias(
            ad.matmul(h, self.params["sigma.weight"]), self.params["sigma.bias"]
        )
        sigma = ad.add(ad.softplus(raw), _SIGMA_FLOOR)
        b = feats.shape[0]
        return ad.reshape(mu, (b,)), ad.reshape(sigma, (b,))


def pretrain_batch_loss(batch, model, nu=DEFAULT_NU, eta=DEFAULT_ETA):
    """Mean fidelity + nu * mean hinge over a batch of PairSamples.

    Returns (loss Tensor, components dict of floats).
    """
    if not batch:
        raise DataError("pretrain_batch_loss: empty batch")
    for s in batch:
        s.validate()
    feats_x = np.stack([s.feat_x for s in batch])
    feats_y = np.stack([s.feat_y for s in batch])
    mu_x, sig_x = model.forward(feats_x)
    mu_y, sig_y = model.forward(feats_y)
    p_w = pair_probability(mu_x, mu_y, sig_x, sig_y)
    p_true = ad.constant(np.array([s.p for s in batch]))
    fid = ad.tensor_mean(fidelity_loss(p_true, p_w))

    g = np.array([s.g for s in batch])
    diff = ad.sub(sig_x, sig_y)
    hinge_vec = ad.maximum(ad.sub(float(eta), ad.mul(diff, ad.constant(g))), 0.0)
    hinge = ad.tensor_mean(hinge_vec)

    loss = ad.add(fid, ad.mul(hinge, float(nu))) if nu != 0.0 else fid
    components = {"fidelity": float(fid.data), "hinge": float(hinge.data)}
    return loss, components


def sample_pairs(items, n_pairs, seed, within_database=True):
    """Draw index pairs from labeled items without equal-sigma pairs.

    ``items`` is a sequence of dicts with keys mu, sigma, database_id.
    Pairs are within a database by default (the comparison model assumes a
    shared subjective scale); set within_database=False for cross-database
    ablations. Returns a list of (i, j) index pairs, deterministically.
    """
    rng = np.random.default_rng(seed)
    n = len(items)
    if n < 2:
        raise DataError("sample_pairs: need at least two items")
    pairs = []
    attempts = 0
    max_attempts = 200 * n_pairs + 1000
    while len(pairs) < n_pairs and attempts < max_attempts:
        attempts += 1
        i, j = rng.integers(0, n, size=2)
        if i == j:
            continue
        a, b = items[int(i)], items[int(j)]
        if within_database and a["database_id"] != b["database_id"]:
            continue
        if float(a["sigma"]) == float(b["sigma"]):
            continue
        pairs.append((int(i), int(j)))
    if len(pairs) < n_pairs:
        raise DataError(
            f"sample_pairs: only found {len(pairs)} of {n_pairs} valid pairs"
        )
    return pairs


def save_pair_list(pairs_meta, path):
    """Write pair metadata as JSON: list of records with ids, stats, paths."""
    path = Path(path)
    path.write_text(json.dumps(pairs_meta, indent=2, sort_keys=True) + "\n")


def load_pair_list(path, base_dir=None):
    """Load pairs from JSON metadata plus tensor files on disk.

    Each record needs id_x, id_y, mu_x, mu_y, sigma_x, sigma_y,
    feat_x_path, feat_y_path. p and g are recomputed from the stats, never
    trusted from the file.
    """
    path = Path(path)
    base = Path(base_dir) if base_dir is not None else path.parent
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read pair list: {exc}") from exc
    if not isinstance(payload, list):
        raise DataError(f"{path}: pair list must be a JSON array")
    out = []
    for rec in payload:
        try:
            fx = read_tensor(_resolve(rec["feat_x_path"], base)).astype(np.float64)
            fy = read_tensor(_resolve(rec["feat_y_path"], base)).astype(np.float64)
            out.append(
                PairSample.from_truth(
                    fx,
                    fy,
                    rec["mu_x"],
                    rec["mu_y"],
                    rec["sigma_x"],
                    rec["sigma_y"],
                    id_x=str(rec.get("id_x", "")),
                    id_y=str(rec.get("id_y", "")),
                ).validate()
            )
        except KeyError as exc:
            raise DataError(f"{path}: pair record missing field {exc}") from exc
    return out


def _resolve(p, base):
    p = Path(p)
    return p if p.is_absolute() else base / p
