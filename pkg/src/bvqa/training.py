"""Optimization, evaluation and model lifecycle.

Fine-tuning draws, per optimization step, one batch from every training
database, computes the mixed PLCC+SRCC loss per database with that
database's own logistic map, and averages the losses. Raw scores stay
comparable across databases while each logistic absorbs the database's
scale. Model selection follows validation (SRCC + PLCC) / 2, weighted by
video count across databases.

Reported metrics are the conventional ones: tie-corrected Spearman on hard
ranks, and Pearson after fitting a 4-parameter logistic per database
(falling back to raw Pearson when the fit does not help).
"""

from __future__ import annotations

import base64
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, NumericError
from .featureio import Manifest, load_features
from .pretrain import PairwiseQualityModel, pretrain_batch_loss
from .ranking import (
    LogisticParams,
    SoftRankConfig,
    average_ranks,
    eval_standard_logistic,
    mixed_loss,
)
from .temporal import PoolingConfig, TemporalHead, score_video

MODEL_KIND = "bvqa-model"
MODEL_VERSION = 1


class Adam:
    """Adam with decoupled L2 weight decay (applied to weights, not gradients)."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        if lr <= 0.0:
            raise ConfigError(f"Adam: lr must be > 0, got {lr}")
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay != 0.0:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update


@dataclass
class TrainConfig:
    """Fine-tuning hyperparameters (defaults follow the published recipe)."""

    epochs: int = 40
    batch_size: int = 32
    lr: float = 5e-4
    lr_decay_factor: float = 0.2
    lr_decay_every: int = 2
    weight_decay: float = 0.0
    lam: float = 1.0
    epsilon: float = 1.0
    tau: int = 12
    beta: float = 0.5
    reduced_dim: int = 128
    hidden_dim: int = 32
    seed: int = 0
    target_val_srcc: float | None = None  # optional early stop

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.lr_decay_every < 1:
            raise ConfigError(f"lr_decay_every must be >= 1, got {self.lr_decay_every}")
        if self.lr_decay_factor <= 0.0:
            raise ConfigError(f"lr_decay_factor must be > 0, got {self.lr_decay_factor}")
        if self.lam < 0.0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.target_val_srcc is not None and not (-1.0 <= self.target_val_srcc <= 1.0):
            raise ConfigError(
                f"target_val_srcc must lie in [-1, 1], got {self.target_val_srcc}"
            )
        PoolingConfig(tau=self.tau, beta=self.beta).validate()
        SoftRankConfig(epsilon=self.epsilon).validate()
        return self

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d).validate()

    def pooling(self):
        return PoolingConfig(tau=self.tau, beta=self.beta)

    def softrank(self):
        return SoftRankConfig(epsilon=self.epsilon)


def lr_at_epoch(config, epoch):
    """Learning rate for a 1-indexed epoch under the step-decay schedule."""
    if epoch < 1:
        raise ConfigError(f"epoch is 1-indexed, got {epoch}")
    return config.lr * config.lr_decay_factor ** ((epoch - 1) // config.lr_decay_every)


@dataclass
class PretrainConfig:
    """Pairwise pre-training hyperparameters."""

    epochs: int = 12
    batch_size: int = 32
    lr: float = 1e-4
    lr_decay_divisor: float = 10.0
    lr_decay_every: int = 3
    nu: float = 1.0
    eta: float = 0.025
    weight_decay: float = 0.0
    hidden_dims: tuple = (32, 16)
    seed: int = 0

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("pretrain: epochs and batch_size must be >= 1")
        if self.lr <= 0.0 or self.lr_decay_divisor <= 0.0 or self.lr_decay_every < 1:
            raise ConfigError("pretrain: invalid learning-rate schedule")
        if self.nu < 0.0 or self.eta < 0.0:
            raise ConfigError("pretrain: nu and eta must be >= 0")
        return self


def pretrain_lr_at_epoch(config, epoch):
    if epoch < 1:
        raise ConfigError(f"epoch is 1-indexed, got {epoch}")
    return config.lr / config.lr_decay_divisor ** ((epoch - 1) // config.lr_decay_every)


def pretrain(pairs, in_dim, config=None):
    """Train the pairwise quality model; returns (model, per-epoch history)."""
    config = (config or PretrainConfig()).validate()
    if not pairs:
        raise DataError("pretrain: no training pairs")
    model = PairwiseQualityModel.init(
        in_dim, hidden_dims=config.hidden_dims, seed=config.seed
    )
    opt = Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng([config.seed, 1])
    history = []
    for epoch in range(1, config.epochs + 1):
        opt.lr = pretrain_lr_at_epoch(config, epoch)
        order = rng.permutation(len(pairs))
        losses, fids, hinges = [], [], []
        for lo in range(0, len(order), config.batch_size):
            batch = [pairs[i] for i in order[lo : lo + config.batch_size]]
            loss, parts = pretrain_batch_loss(batch, model, nu=config.nu, eta=config.eta)
            ad.backward(loss)
            opt.step()
            opt.zero_grad()
            losses.append(float(loss.data))
            fids.append(parts["fidelity"])
            hinges.append(parts["hinge"])
        history.append(
            {
                "epoch": epoch,
                "loss": float(np.mean(losses)),
                "fidelity": float(np.mean(fids)),
                "hinge": float(np.mean(hinges)),
                "lr": opt.lr,
            }
        )
    return model, history


class VideoQualityModel:
    """Temporal head plus per-database logistic maps and pooling config."""

    def __init__(self, head, logistic, pooling):
        self.head = head
        self.logistic = dict(logistic)
        self.pooling = pooling

    def parameters(self):
        params = dict(self.head.parameters())
        for db in sorted(self.logistic):
            for name, tensor in self.logistic[db].parameters().items():
                params[f"logistic.{db}.{name}"] = tensor
        return params

    def predict(self, features):
        """Raw video score Q_p for one feature sequence (no gradient)."""
        with ad.no_record():
            return float(score_video(features, self.head, self.pooling).data)


def predict_scores(model, manifest, threads=1):
    """Score every video in a manifest; returns {video_id: Q_p}."""
    records = list(manifest)
    if threads <= 1:
        return {rec.video_id: model.predict(load_features(rec.feature_path)) for rec in records}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        scores = pool.map(
            lambda rec: model.predict(load_features(rec.feature_path)), records
        )
        return {rec.video_id: s for rec, s in zip(records, scores)}


def pearson(x, y):
    """Plain Pearson correlation of two 1-d arrays (no guards)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc)))
    if denom == 0.0:
        raise NumericError("pearson: zero variance")
    return float(np.dot(xc, yc)) / denom


def spearman(x, y):
    """Tie-corrected Spearman: Pearson on fractional average ranks."""
    return pearson(average_ranks(x), average_ranks(y))


def fit_logistic(preds, targets, iters=500):
    """Least-squares fit of the conventional 4-parameter logistic.

    Plain gradient descent with backtracking on the step size; deterministic.
    Returns (gp1, gp2, gp3, gp4) = (midpoint, scale, upper, lower).
    Initialization: midpoint at the prediction median, scale at the
    prediction std, asymptotes at the target extremes.
    """
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    scale = float(np.std(p))
    if scale == 0.0:
        raise NumericError("fit_logistic: constant predictions")
    theta = np.array(
        [float(np.median(p)), scale, float(np.max(y)), float(np.min(y))]
    )

    def mse_and_grad(th):
        c1, c2, c3, c4 = th
        s_abs = abs(c2)
        z = (p - c1) / s_abs
        s = 0.5 * (1.0 + np.tanh(0.5 * z))
        f = (c3 - c4) * s + c4
        resid = f - y
        mse = float(np.mean(resid * resid))
        sp = s * (1.0 - s)
        common = 2.0 * resid / p.shape[0]
        g1 = float(np.sum(common * (c3 - c4) * sp * (-1.0 / s_abs)))
        g2 = float(np.sum(common * (c3 - c4) * sp * (-z / s_abs) * np.sign(c2)))
        g3 = float(np.sum(common * s))
        g4 = float(np.sum(common * (1.0 - s)))
        return mse, np.array([g1, g2, g3, g4])

    best_mse, grad = mse_and_grad(theta)
    step = 1.0
    for _ in range(iters):
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < 1e-14:
            break
        accepted = False
        for _ in range(30):
            cand = theta - step * grad
            if abs(cand[1]) < 1e-12:
                step *= 0.5
                continue
            mse, _ = mse_and_grad(cand)
            if mse < best_mse:
                theta = cand
                best_mse = mse
                step *= 1.2
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        _, grad = mse_and_grad(theta)
    return tuple(float(v) for v in theta)


@dataclass
class DatabaseReport:
    """Evaluation metrics for one database group."""

    database_id: str
    n: int
    srcc: float | None
    plcc: float | None
    srcc_defined: bool
    plcc_defined: bool
    logistic: tuple | None  # fitted standard params, None when raw PLCC used

    def to_dict(self):
        return {
            "database_id": self.database_id,
            "n": self.n,
            "srcc": self.srcc,
            "plcc": self.plcc,
            "srcc_defined": self.srcc_defined,
            "plcc_defined": self.plcc_defined,
            "logistic": list(self.logistic) if self.logistic is not None else None,
        }


@dataclass
class EvalReport:
    """Per-database metrics plus count-weighted averages."""

    databases: list = field(default_factory=list)
    weighted_srcc: float | None = None
    weighted_plcc: float | None = None
    total_n: int = 0

    def to_dict(self):
        return {
            "databases": [d.to_dict() for d in self.databases],
            "weighted_srcc": self.weighted_srcc,
            "weighted_plcc": self.weighted_plcc,
            "total_n": self.total_n,
        }

    def selection_criterion(self):
        """(SRCC + PLCC) / 2 on the weighted averages; None if both undefined."""
        vals = [v for v in (self.weighted_srcc, self.weighted_plcc) if v is not None]
        if not vals:
            return None
        return float(np.mean(vals))


def _weighted(pairs):
    # pairs: (value or None, n); average over defined entries
    defined = [(v, n) for v, n in pairs if v is not None]
    if not defined:
        return None
    total = sum(n for _, n in defined)
    return float(sum(v * n for v, n in defined) / total)


def evaluate_scores(scores, manifest):
    """Metrics for predicted scores {video_id: float} against a manifest."""
    missing = [rec.video_id for rec in manifest if rec.video_id not in scores]
    if missing:
        raise DataError(f"evaluate: missing predictions for {missing[:5]} ...")
    groups = manifest.by_database()
    if not groups:
        raise DataError("evaluate: empty manifest")
    reports = []
    for db in sorted(groups):
        recs = groups[db]
        if len(recs) < 3:
            raise DataError(f"evaluate: database {db!r} has fewer than 3 videos")
        preds = np.array([scores[r.video_id] for r in recs], dtype=np.float64)
        mos = np.array([r.mos for r in recs], dtype=np.float64)
        if not np.all(np.isfinite(preds)):
            raise NumericError(f"evaluate: non-finite prediction in database {db!r}")
        if np.ptp(mos) == 0.0:
            raise DataError(f"evaluate: database {db!r} has constant MOS")

        if np.ptp(preds) == 0.0:
            srcc = plcc = None
            fitted = None
        else:
            srcc = spearman(preds, mos)
            raw = pearson(preds, mos)
            fitted = None
            plcc = raw
            try:
                params = fit_logistic(preds, mos)
                mapped = eval_standard_logistic(preds, *params)
                if np.ptp(mapped) > 0.0:
                    fit_r = pearson(mapped, mos)
                    if fit_r >= raw:
                        plcc = fit_r
                        fitted = params
            except NumericError:
                pass
        reports.append(
            DatabaseReport(
                database_id=db,
                n=len(recs),
                srcc=srcc,
                plcc=plcc,
                srcc_defined=srcc is not None,
                plcc_defined=plcc is not None,
                logistic=fitted,
            )
        )
    return EvalReport(
        databases=reports,
        weighted_srcc=_weighted([(r.srcc, r.n) for r in reports]),
        weighted_plcc=_weighted([(r.plcc, r.n) for r in reports]),
        total_n=sum(r.n for r in reports),
    )


def evaluate(model, manifest, threads=1):
    """Score a manifest with the model and compute per-database metrics."""
    return evaluate_scores(predict_scores(model, manifest, threads=threads), manifest)


def _batches(indices, batch_size):
    chunks = [
        list(indices[lo : lo + batch_size]) for lo in range(0, len(indices), batch_size)
    ]
    # a final 1-element batch cannot support correlation losses; merge it
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2].extend(chunks[-1])
        chunks.pop()
    return chunks


def finetune(train_manifests, val_manifest, config=None):
    """Fine-tune the temporal head on one or more databases.

    Returns (model, history) where history holds one row per epoch with the
    mean train loss and validation metrics. The returned model carries the
    parameters of the best validation epoch by (SRCC + PLCC) / 2.
    """
    config = (config or TrainConfig()).validate()
    if isinstance(train_manifests, Manifest):
        train_manifests = [train_manifests]
    if not train_manifests or any(len(m) == 0 for m in train_manifests):
        raise DataError("finetune: empty training manifest")

    # merge manifests, grouping videos by database
    by_db = {}
    for m in train_manifests:
        for db, recs in m.by_database().items():
            by_db.setdefault(db, []).extend(recs)
    db_ids = sorted(by_db)
    for db, recs in by_db.items():
        if len(recs) < 2:
            raise DataError(f"finetune: database {db!r} has fewer than 2 videos")

    cache = {}

    def features_of(rec):
        if rec.feature_path not in cache:
            cache[rec.feature_path] = load_features(rec.feature_path)
        return cache[rec.feature_path]

    in_dim = features_of(by_db[db_ids[0]][0]).shape[1]
    for db in db_ids:
        for rec in by_db[db]:
            feats = features_of(rec)
            if feats.shape[1] != in_dim:
                raise DataError(
                    f"finetune: {rec.video_id} has {feats.shape[1]} channels, expected {in_dim}"
                )

    head = TemporalHead.init(
        in_dim,
        reduced_dim=config.reduced_dim,
        hidden_dim=config.hidden_dim,
        seed=config.seed,
    )
    logistic = {db: LogisticParams() for db in db_ids}
    model = VideoQualityModel(head, logistic, config.pooling())
    opt = Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    shuffle_rng = np.random.default_rng([config.seed, 2])
    pooling = config.pooling()
    softrank = config.softrank()

    best = None  # (criterion, epoch, saved arrays)
    history = []
    for epoch in range(1, config.epochs + 1):
        opt.lr = lr_at_epoch(config, epoch)
        db_batches = {}
        for db in db_ids:
            perm = shuffle_rng.permutation(len(by_db[db]))
            db_batches[db] = _batches(perm, config.batch_size)
        steps = max(len(b) for b in db_batches.values())
        step_losses = []
        for step in range(steps):
            per_db_losses = []
            for db in db_ids:
                batch = db_batches[db][step % len(db_batches[db])]
                recs = [by_db[db][i] for i in batch]
                scores = ad.stack(
                    [
                        score_video(features_of(rec), head, pooling)
                        for rec in recs
                    ]
                )
                mos = np.array([rec.mos for rec in recs])
                per_db_losses.append(
                    mixed_loss(scores, mos, logistic[db], lam=config.lam, config=softrank)
                )
            total = per_db_losses[0]
            for other in per_db_losses[1:]:
                total = ad.add(total, other)
            total = ad.mul(total, 1.0 / len(per_db_losses))
            if not np.isfinite(total.data):
                raise NumericError(f"finetune: non-finite loss at epoch {epoch}")
            ad.backward(total)
            opt.step()
            opt.zero_grad()
            step_losses.append(float(total.data))

        report = evaluate(model, val_manifest)
        crit = report.selection_criterion()
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(step_losses)),
                "val_srcc": report.weighted_srcc,
                "val_plcc": report.weighted_plcc,
                "lr": opt.lr,
            }
        )
        if crit is not None and (best is None or crit > best[0]):
            saved = {k: p.data.copy() for k, p in model.parameters().items()}
            best = (crit, epoch, saved)
        if (
            config.target_val_srcc is not None
            and report.weighted_srcc is not None
            and report.weighted_srcc >= config.target_val_srcc
        ):
            break

    if best is not None:
        params = model.parameters()
        for k, arr in best[2].items():
            params[k].data = arr
    return model, history


# --- model checkpoints -------------------------------------------------------


def _encode_array(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.astype("<f8").tobytes(order="C")).decode("ascii"),
    }


def _decode_array(obj):
    try:
        shape = tuple(int(s) for s in obj["shape"])
        raw = base64.b64decode(obj["data"])
        return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"checkpoint: bad array record: {exc}") from exc


def save_model(model, path):
    """Serialize a model to JSON (arrays as base64 float64, little-endian)."""
    payload = {
        "kind": MODEL_KIND,
        "version": MODEL_VERSION,
        "in_dim": model.head.in_dim,
        "reduced_dim": model.head.reduced_dim,
        "hidden_dim": model.head.hidden_dim,
        "pooling": {"tau": model.pooling.tau, "beta": model.pooling.beta},
        "head": {k: _encode_array(t.data) for k, t in model.head.parameters().items()},
        "logistic": {
            db: {name: float(t.data) for name, t in lp.parameters().items()}
            for db, lp in model.logistic.items()
        },
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_model(path):
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read model: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("kind") != MODEL_KIND:
        raise DataError(f"{path}: not a model checkpoint")
    if payload.get("version") != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {payload.get('version')!r}")
    head = TemporalHead(
        in_dim=int(payload["in_dim"]),
        reduced_dim=int(payload["reduced_dim"]),
        hidden_dim=int(payload["hidden_dim"]),
        params={k: ad.parameter(_decode_array(v)) for k, v in payload["head"].items()},
    )
    expected = set(
        TemporalHead.init(head.in_dim, head.reduced_dim, head.hidden_dim).parameters()
    )
    if set(head.params) != expected:
        raise DataError(f"{path}: checkpoint parameter names do not match the head layout")
    logistic = {
        db: LogisticParams(**vals) for db, vals in payload.get("logistic", {}).items()
    }
    try:
        pooling = PoolingConfig(
            tau=int(payload["pooling"]["tau"]), beta=float(payload["pooling"]["beta"])
        ).validate()
    except ConfigError as exc:
        raise DataError(f"{path}: bad pooling parameters: {exc}") from exc
    return VideoQualityModel(head, logistic, pooling)


# --- domain gap and ensembling ----------------------------------------------


def coral_distance(feats_a, feats_b):
    """Squared Frobenius distance between feature covariances, / (4 D^2).

    Covariances are unbiased (N-1 normalization). Both inputs are (N, D)
    with N >= 2 and matching D.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DataError("coral_distance: inputs must be (N, D)")
    if a.shape[1] != b.shape[1]:
        raise DataError(
            f"coral_distance: dimension mismatch, {a.shape[1]} vs {b.shape[1]}"
        )
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise DataError("coral_distance: need at least 2 rows per side")
    d = a.shape[1]
    ca = np.atleast_2d(np.cov(a, rowvar=False, ddof=1))
    cb = np.atleast_2d(np.cov(b, rowvar=False, ddof=1))
    diff = ca - cb
    return float(np.sum(diff * diff) / (4.0 * d * d))


def ensemble_scores(scores_a, scores_b, kappa):
    """Convex combination kappa * a + (1 - kappa) * b over matching ids."""
    if not (0.0 <= kappa <= 1.0):
        raise ConfigError(f"ensemble: kappa must lie in [0, 1], got {kappa}")
    if set(scores_a) != set(scores_b):
        raise DataError("ensemble: score sets cover different video ids")
    return {vid: kappa * scores_a[vid] + (1.0 - kappa) * scores_b[vid] for vid in scores_a}


def ensemble_sweep(scores_a, scores_b, manifest):
    """Pick kappa on a 0.01 grid maximizing weighted (SRCC + PLCC) / 2.

    Ties keep the smallest kappa. Returns (kappa, report at that kappa).
    """
    best = None
    for i in range(101):
        kappa = i / 100.0
        report = evaluate_scores(ensemble_scores(scores_a, scores_b, kappa), manifest)
        crit = report.selection_criterion()
        if crit is None:
            continue
        if best is None or crit > best[0]:
            best = (crit, kappa, report)
    if best is None:
        raise DataError("ensemble sweep: criterion undefined at every kappa")
    return best[1], best[2]
