"""Binary feature tensors, dataset manifests, pooling and fusion.

Tensor file layout (all integers little-endian):

    bytes 0..3    magic "BVQF"
    bytes 4..7    format version, u32 (currently 1)
    bytes 8..11   dtype code, u32 (0 = float32; the only code defined)
    bytes 12..15  ndim, u32
    then          ndim dimension sizes, u64 each
    then          payload, row-major float32, little-endian

Readers reject unknown magic, versions and dtype codes, and report
truncation with the expected vs actual byte counts.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"BVQF"
VERSION = 1
DTYPE_FLOAT32 = 0
_MAX_NDIM = 8

SPATIAL_DIM = 4096
MOTION_DIM = 512
FUSED_DIM = SPATIAL_DIM + MOTION_DIM

TENSOR_SUFFIX = ".bvqf"


def write_tensor(path, array):
    """Write an array as a float32 tensor file (row-major, little-endian)."""
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if arr.ndim == 0 or arr.ndim > _MAX_NDIM:
        raise DataError(f"write_tensor: rank {arr.ndim} outside 1..{_MAX_NDIM}")
    path = Path(path)
    header = MAGIC + struct.pack("<III", VERSION, DTYPE_FLOAT32, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.astype("<f4", copy=False).tobytes(order="C")
    path.write_bytes(header + dims + payload)


def read_tensor(path):
    """Read a tensor file back as a float32 array."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16:
        raise DataError(f"{path}: too short to be a tensor file ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}, not a feature tensor file")
    version, dtype_code, ndim = struct.unpack_from("<III", raw, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    if dtype_code != DTYPE_FLOAT32:
        raise DataError(f"{path}: unsupported dtype code {dtype_code}")
    if ndim < 1 or ndim > _MAX_NDIM:
        raise DataError(f"{path}: rank {ndim} outside 1..{_MAX_NDIM}")
    dims_end = 16 + 8 * ndim
    if len(raw) < dims_end:
        raise DataError(f"{path}: truncated header, {len(raw)} bytes")
    shape = struct.unpack_from(f"<{ndim}Q", raw, 16)
    count = 1
    for d in shape:
        count *= d
    expected = dims_end + 4 * count
    if len(raw) != expected:
        raise DataError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(raw)}"
        )
    arr = np.frombuffer(raw, dtype="<f4", count=count, offset=dims_end)
    return arr.reshape(shape).astype(np.float32, copy=True)


def load_features(path):
    """Read a (T, C) feature sequence, promoted to float64 for the math core."""
    arr = read_tensor(path)
    if arr.ndim != 2:
        raise DataError(f"{path}: expected a (T, C) feature sequence, got rank {arr.ndim}")
    return arr.astype(np.float64)


_STREAM_DIMS = {"spatial": SPATIAL_DIM, "motion": MOTION_DIM, "fused": FUSED_DIM}


@dataclass
class FeatureSequence:
    """A per-video feature sequence tagged with its stream of origin."""

    video_id: str
    data: np.ndarray  # (T, C)
    stream: str  # "spatial" | "motion" | "fused"
    stride: int = 1  # frames of source video per feature row

    def validate(self):
        if self.stream not in _STREAM_DIMS:
            raise DataError(f"{self.video_id}: unknown stream {self.stream!r}")
        if self.data.ndim != 2:
            raise DataError(f"{self.video_id}: feature data must be (T, C)")
        want = _STREAM_DIMS[self.stream]
        have = self.data.shape[1]
        if have != want:
            raise DataError(
                f"{self.video_id}: {self.stream} stream expects {want} channels, got {have}"
            )
        if self.data.shape[0] < 1:
            raise DataError(f"{self.video_id}: empty feature sequence")
        if self.stride < 1:
            raise DataError(f"{self.video_id}: stride must be >= 1")
        return self


def gap_gsp_pool(activations):
    """Spatially pool (T, H, W, C) activations to (T, 2C).

    First C channels: global average pool. Last C: global std pool
    (population std over the H*W positions).
    """
    act = np.asarray(activations, dtype=np.float64)
    if act.ndim != 4:
        raise DataError(f"gap_gsp_pool: expected (T, H, W, C), got shape {act.shape}")
    t, h, w, c = act.shape
    if h * w < 1 or t < 1 or c < 1:
        raise DataError(f"gap_gsp_pool: empty extent in shape {act.shape}")
    flat = act.reshape(t, h * w, c)
    gap = flat.mean(axis=1)
    gsp = flat.std(axis=1)  # ddof=0
    return np.concatenate([gap, gsp], axis=1)


def temporal_subsample(features, factor=2):
    """Keep every ``factor``-th row starting at index 0 (ceil(T/factor) rows)."""
    feats = np.asarray(features)
    if feats.ndim != 2:
        raise DataError(f"temporal_subsample: expected (T, C), got shape {feats.shape}")
    if factor < 1:
        raise DataError(f"temporal_subsample: factor must be >= 1, got {factor}")
    return feats[::factor]


def fuse(spatial, motion):
    """Concatenate aligned spatial and motion rows, spatial channels first."""
    spatial = np.asarray(spatial)
    motion = np.asarray(motion)
    if spatial.ndim != 2 or motion.ndim != 2:
        raise DataError("fuse: both inputs must be (T, C)")
    if spatial.shape[0] != motion.shape[0]:
        raise DataError(
            f"fuse: length mismatch, spatial has {spatial.shape[0]} rows, "
            f"motion has {motion.shape[0]} (stride misconfiguration upstream?)"
        )
    return np.concatenate([spatial, motion], axis=1)


@dataclass
class VideoRecord:
    """One video entry in a manifest."""

    video_id: str
    mos: float
    database_id: str
    feature_path: str
    mos_std: float | None = None

    def to_dict(self):
        d = {
            "video_id": self.video_id,
            "mos": self.mos,
            "database_id": self.database_id,
            "feature_path": self.feature_path,
        }
        if self.mos_std is not None:
            d["mos_std"] = self.mos_std
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                video_id=str(d["video_id"]),
                mos=float(d["mos"]),
                database_id=str(d["database_id"]),
                feature_path=str(d["feature_path"]),
                mos_std=float(d["mos_std"]) if d.get("mos_std") is not None else None,
            )
        except KeyError as exc:
            raise DataError(f"manifest record missing field {exc}") from exc


@dataclass
class Manifest:
    """A list of videos with labels, plus split provenance."""

    records: list[VideoRecord] = field(default_factory=list)
    split: str = "all"
    seed: int | None = None

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def validate(self, base_dir=None, check_files=True):
        seen = set()
        for rec in self.records:
            if rec.video_id in seen:
                raise DataError(f"manifest: duplicate video_id {rec.video_id!r}")
            seen.add(rec.video_id)
            if check_files:
                p = self.resolve_path(rec, base_dir)
                if not p.is_file():
                    raise DataError(f"manifest: feature file not found: {p}")
        return self

    @staticmethod
    def resolve_path(rec, base_dir=None):
        p = Path(rec.feature_path)
        if not p.is_absolute() and base_dir is not None:
            p = Path(base_dir) / p
        return p

    def database_ids(self):
        out = []
        for rec in self.records:
            if rec.database_id not in out:
                out.append(rec.database_id)
        return out

    def by_database(self):
        groups = {}
        for rec in self.records:
            groups.setdefault(rec.database_id, []).append(rec)
        return groups

    def to_dict(self):
        return {
            "split": self.split,
            "seed": self.seed,
            "records": [r.to_dict() for r in self.records],
        }


def save_manifest(manifest, path):
    path = Path(path)
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")


def load_manifest(path, check_files=True):
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read manifest: {exc}") from exc
    if not isinstance(payload, dict) or "records" not in payload:
        raise DataError(f"{path}: manifest must be an object with a 'records' list")
    records = [VideoRecord.from_dict(d) for d in payload["records"]]
    manifest = Manifest(
        records=records,
        split=str(payload.get("split", "all")),
        seed=payload.get("seed"),
    )
    manifest.validate(base_dir=path.parent, check_files=check_files)
    # keep records usable from any working directory
    for rec in manifest.records:
        rec.feature_path = str(Manifest.resolve_path(rec, path.parent))
    return manifest


def make_splits(records, seed, ratios=(0.6, 0.2, 0.2)):
    """Shuffle records with the given seed and cut train/val/test manifests.

    The seed is recorded on every resulting manifest so a split can be
    reproduced or audited later.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"make_splits: ratios must be three values summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    shuffled = [records[i] for i in order]
    n = len(shuffled)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    parts = {
        "train": shuffled[:n_train],
        "val": shuffled[n_train : n_train + n_val],
        "test": shuffled[n_train + n_val :],
    }
    return tuple(
        Manifest(records=parts[name], split=name, seed=seed)
        for name in ("train", "val", "test")
    )
