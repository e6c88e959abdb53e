"""Quality-aware pre-training of the spatial backbone on image pairs.

The pair list is JSON: [{"image_x", "image_y", "mos_x", "mos_y", "sd_x",
"sd_y"}, ...]. Ground-truth preference probability and uncertainty ordering
come from the subjective statistics; the model predicts a (mu, sigma) pair
per image and trains on fidelity + hinge.

Missing images are reported; the run aborts when more than 1% of referenced
images are missing, otherwise affected pairs are dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import cv2
import torch
from torch import nn

from .backbones import SPATIAL_CHANNELS, build_spatial_trunk
from .errors import ConfigError, DataError
from .losses import (
    DEFAULT_ETA,
    DEFAULT_NU,
    SIGMA_FLOOR,
    pair_batch_loss,
    pair_probability_value,
)
from .video import IMAGE_MEAN, IMAGE_STD

DEFAULT_RESOLUTION = 384
MISSING_BUDGET = 0.01


@dataclass
class ImagePair:
    image_x: str
    image_y: str
    p: float
    g: float


def load_pair_list(path):
    """Parse and validate the pair list; returns (pairs, dropped_count).

    Pairs with equal true sigmas carry no uncertainty ordering and are
    rejected outright; pairs with missing image files are dropped, subject
    to the 1% budget over all referenced images.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read pair list: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise DataError(f"{path}: pair list must be a non-empty JSON array")

    referenced, missing = set(), set()
    pairs, dropped = [], 0
    for i, entry in enumerate(raw):
        try:
            ix, iy = str(entry["image_x"]), str(entry["image_y"])
            mos_x, mos_y = float(entry["mos_x"]), float(entry["mos_y"])
            sd_x, sd_y = float(entry["sd_x"]), float(entry["sd_y"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: pair {i}: {exc}") from exc
        if sd_x == sd_y:
            raise DataError(f"{path}: pair {i}: equal sigmas carry no ordering")
        px, py = path.parent / ix, path.parent / iy
        referenced.update([str(px), str(py)])
        absent = [p for p in (px, py) if not p.is_file()]
        if absent:
            missing.update(str(p) for p in absent)
            dropped += 1
            continue
        pairs.append(
            ImagePair(
                image_x=str(px),
                image_y=str(py),
                p=pair_probability_value(mos_x, mos_y, sd_x, sd_y),
                g=float(np.sign(sd_x - sd_y)),
            )
        )
    if missing:
        frac = len(missing) / len(referenced)
        if frac > MISSING_BUDGET:
            raise DataError(
                f"{path}: {len(missing)} of {len(referenced)} referenced images "
                f"missing ({frac:.1%} > {MISSING_BUDGET:.0%} budget)"
            )
    if not pairs:
        raise DataError(f"{path}: every pair was dropped")
    return pairs, dropped


class PairwiseImageModel(nn.Module):
    """Spatial trunk + average pool + linear (mu, sigma) heads.

    sigma is softplus of the raw head plus a tiny floor, strictly positive.
    """

    def __init__(self, seed=0):
        super().__init__()
        self.trunk = build_spatial_trunk(seed=seed)
        for p in self.trunk.parameters():
            p.requires_grad_(True)
        torch.manual_seed(seed + 1)
        self.mu_head = nn.Linear(SPATIAL_CHANNELS, 1)
        self.sigma_head = nn.Linear(SPATIAL_CHANNELS, 1)

    def forward(self, images):
        feats = self.trunk(images).mean(dim=(2, 3))
        mu = self.mu_head(feats).squeeze(1)
        sigma = nn.functional.softplus(self.sigma_head(feats).squeeze(1)) + SIGMA_FLOOR
        return mu, sigma


def _load_image(path, resolution):
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise DataError(f"{path}: cannot decode image")
    img = cv2.resize(img, (resolution, resolution), interpolation=cv2.INTER_AREA)
    rgb = cv2.cvtColor(img, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
    rgb = (rgb - IMAGE_MEAN) / IMAGE_STD
    return torch.from_numpy(np.ascontiguousarray(rgb.transpose(2, 0, 1)))


def _batch_tensors(pairs, resolution):
    xs = torch.stack([_load_image(p.image_x, resolution) for p in pairs])
    ys = torch.stack([_load_image(p.image_y, resolution) for p in pairs])
    p_true = torch.tensor([p.p for p in pairs], dtype=torch.float64)
    g = torch.tensor([p.g for p in pairs], dtype=torch.float64)
    return xs, ys, p_true, g


def _epoch_loss(model, pairs, batch_size, resolution, nu, eta):
    """Mean objective over the pair list, no gradient."""
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start:start + batch_size]
            xs, ys, p_true, g = _batch_tensors(chunk, resolution)
            mu_x, sig_x = model(xs)
            mu_y, sig_y = model(ys)
            loss, _ = pair_batch_loss(
                p_true, g, mu_x.double(), mu_y.double(),
                sig_x.double(), sig_y.double(), nu=nu, eta=eta,
            )
            total += float(loss) * len(chunk)
            count += len(chunk)
    return total / count


def pretrain_backbone(pairs_path, out_path, epochs=1, batch_size=8, lr=1e-4,
                      eta=DEFAULT_ETA, nu=DEFAULT_NU,
                      resolution=DEFAULT_RESOLUTION, seed=0, log=print):
    """Fine-tune the spatial trunk on image pairs; saves weights, returns a summary.

    The summary carries the effective eta/nu/resolution (echoed to the log),
    the dropped-pair count, and the mean objective before and after training.
    """
    if epochs < 1:
        raise ConfigError(f"pretrain: epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ConfigError(f"pretrain: batch_size must be >= 1, got {batch_size}")
    if not (lr > 0.0):
        raise ConfigError(f"pretrain: lr must be > 0, got {lr}")
    if resolution < 32:
        raise ConfigError(f"pretrain: resolution must be >= 32, got {resolution}")

    pairs, dropped = load_pair_list(pairs_path)
    log(f"pretrain: eta {eta} nu {nu} resolution {resolution} "
        f"pairs {len(pairs)} dropped {dropped}")

    model = PairwiseImageModel(seed=seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    order_rng = np.random.default_rng(seed)

    # before/after losses both measured in eval mode, so batch-norm running
    # statistics are used consistently and the eval passes mutate nothing
    model.eval()
    loss_before = _epoch_loss(model, pairs, batch_size, resolution, nu, eta)
    log(f"pretrain: loss before {loss_before:.6f}")
    model.train()
    for epoch in range(epochs):
        perm = order_rng.permutation(len(pairs))
        running = 0.0
        for start in range(0, len(pairs), batch_size):
            chunk = [pairs[j] for j in perm[start:start + batch_size]]
            xs, ys, p_true, g = _batch_tensors(chunk, resolution)
            mu_x, sig_x = model(xs)
            mu_y, sig_y = model(ys)
            loss, _ = pair_batch_loss(
                p_true, g, mu_x.double(), mu_y.double(),
                sig_x.double(), sig_y.double(), nu=nu, eta=eta,
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += float(loss.detach()) * len(chunk)
        log(f"pretrain: epoch {epoch + 1}/{epochs} loss {running / len(pairs):.6f}")
    model.eval()
    loss_after = _epoch_loss(model, pairs, batch_size, resolution, nu, eta)
    log(f"pretrain: loss after {loss_after:.6f}")

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out_path)
    return {
        "eta": eta,
        "nu": nu,
        "resolution": resolution,
        "pairs": len(pairs),
        "dropped_pairs": dropped,
        "loss_before": loss_before,
        "loss_after": loss_after,
        "weights": str(out_path),
    }
