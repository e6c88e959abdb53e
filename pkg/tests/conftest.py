"""Shared test helpers: independent oracles and synthetic data builders.

The oracles here are deliberately naive transcriptions (python loops, no
shared code with the implementation) so each check exercises two
independent routes to the same value.
"""

import math

import numpy as np
import pytest

from bvqa.featureio import Manifest, VideoRecord, save_manifest, write_tensor


# --- naive oracles ------------------------------------------------------------


def naive_hysteresis(q, tau, beta):
    """Direct loop transcription of the pooling recurrences (1-based)."""
    q = [float(v) for v in q]
    t_total = len(q)
    pooled = []
    for t in range(1, t_total + 1):
        if t == 1:
            memory = q[0]
        else:
            lo = max(1, t - tau)
            memory = min(q[k - 1] for k in range(lo, t))
        hi = min(t + tau, t_total)
        window = [q[k - 1] for k in range(t, hi + 1)]
        weights = [math.exp(-v) for v in window]
        norm = sum(weights)
        current = sum(w * v for w, v in zip(weights, window)) / norm
        pooled.append(beta * memory + (1.0 - beta) * current)
    return pooled


def naive_video_score(q, tau, beta):
    pooled = naive_hysteresis(q, tau, beta)
    return sum(pooled) / len(pooled)


def naive_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    num = sum((a - mx) * (b - my) for a, b in zip(x, y))
    dx = math.sqrt(sum((a - mx) ** 2 for a in x))
    dy = math.sqrt(sum((b - my) ** 2 for b in y))
    return num / (dx * dy)


def naive_average_ranks(v):
    """O(N^2) fractional ranks: 1 + (#smaller) + (#equal - 1) / 2."""
    ranks = []
    for x in v:
        less = sum(1 for y in v if y < x)
        equal = sum(1 for y in v if y == x)
        ranks.append(less + (equal + 1) / 2.0)
    return ranks


def naive_spearman(x, y):
    return naive_pearson(naive_average_ranks(list(x)), naive_average_ranks(list(y)))


def naive_coral(a, b):
    """Double-loop covariance distance oracle."""

    def cov(m):
        n, d = len(m), len(m[0])
        mu = [sum(row[j] for row in m) / n for j in range(d)]
        c = [[0.0] * d for _ in range(d)]
        for i in range(d):
            for j in range(d):
                c[i][j] = sum((row[i] - mu[i]) * (row[j] - mu[j]) for row in m) / (n - 1)
        return c

    a = [list(map(float, row)) for row in a]
    b = [list(map(float, row)) for row in b]
    ca, cb = cov(a), cov(b)
    d = len(ca)
    total = sum((ca[i][j] - cb[i][j]) ** 2 for i in range(d) for j in range(d))
    return total / (4.0 * d * d)


def naive_fidelity(p, q):
    return 1.0 - math.sqrt(p * q) - math.sqrt((1.0 - p) * (1.0 - q))


def naive_pair_probability(mu_x, mu_y, sigma_x, sigma_y):
    z = (mu_x - mu_y) / math.sqrt(sigma_x**2 + sigma_y**2)
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


# --- synthetic data builders --------------------------------------------------


def plant_database(
    root,
    name,
    n_videos,
    t_len,
    dim,
    seed,
    mos_map=lambda q: 1.0 + 4.0 * q,
    signal=3.0,
    noise=0.3,
    direction_seed=None,
):
    """Write feature files with a monotone planted quality signal.

    Each video's features are isotropic noise plus quality * signal along a
    fixed random direction; MOS is a monotone map of the latent quality.
    direction_seed pins the direction separately so two databases can share
    it while drawing independent noise. Returns the list of VideoRecords
    (feature paths absolute).
    """
    rng = np.random.default_rng(seed)
    dir_rng = rng if direction_seed is None else np.random.default_rng(direction_seed)
    direction = dir_rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    feat_dir = root / name
    feat_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_videos):
        quality = (i + 0.5) / n_videos  # even coverage of the quality range
        feats = rng.normal(scale=noise, size=(t_len, dim)) + signal * quality * direction
        path = feat_dir / f"{name}_{i:03d}.bvqf"
        write_tensor(path, feats.astype(np.float32))
        records.append(
            VideoRecord(
                video_id=f"{name}_{i:03d}",
                mos=float(mos_map(quality)),
                database_id=name,
                feature_path=str(path),
            )
        )
    rng.shuffle(records)
    return records


def write_manifest(path, records, split="all", seed=0):
    manifest = Manifest(records=list(records), split=split, seed=seed)
    save_manifest(manifest, path)
    return manifest


@pytest.fixture(autouse=True)
def _no_ambient_config(monkeypatch):
    monkeypatch.delenv("BVQA_CONFIG", raising=False)
