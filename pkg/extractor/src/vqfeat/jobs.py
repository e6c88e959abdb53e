"""Batch extraction jobs: a JSON job in, tensor files + manifests out.

Job JSON shape:

    {
      "out_dir": "features/",
      "streams": ["spatial", "motion"],      # optional, default both
      "seed": 0,                             # backbone init seed
      "window": 64,                          # motion clip window, frames
      "videos": [
        {"path": "clips/a.mp4", "video_id": "a", "mos": 3.2,
         "database_id": "mydb", "mos_std": 0.8},   # mos_std optional
        ...
      ]
    }

Videos run independently, optionally across worker processes (each worker
builds its own backbones from the job seed, so results do not depend on the
process count and nothing mutable is shared). A video that fails to decode
or is too short is recorded as failed and the rest continue.

Outputs under out_dir: <stream>/<video_id> tensor files, one manifest JSON
per stream covering the successful videos (feature paths relative to the
manifest), and job_report.json with per-video status.
"""

from __future__ import annotations

import json
import multiprocessing as mp
from dataclasses import dataclass, field
from pathlib import Path

import torch

from bvqa.errors import DataError as BvqaDataError
from bvqa.featureio import (
    TENSOR_SUFFIX,
    Manifest,
    VideoRecord,
    save_manifest,
    write_tensor,
)

from .backbones import build_fast_pathway, build_spatial_trunk
from .errors import ConfigError, DataError
from .extract import DEFAULT_WINDOW, extract_motion, extract_spatial
from .video import decode_frames

STREAMS = ("spatial", "motion")


@dataclass
class JobVideo:
    path: str
    video_id: str
    mos: float
    database_id: str
    mos_std: float | None = None


@dataclass
class ExtractionJob:
    out_dir: str
    videos: list = field(default_factory=list)
    streams: tuple = STREAMS
    seed: int = 0
    window: int = DEFAULT_WINDOW

    @classmethod
    def from_json(cls, path):
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: cannot read job: {exc}") from exc
        if not isinstance(raw, dict):
            raise DataError(f"{path}: job must be a JSON object")
        known = {"out_dir", "streams", "seed", "window", "videos"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"{path}: unknown job keys: {', '.join(unknown)}")
        if "out_dir" not in raw or "videos" not in raw:
            raise ConfigError(f"{path}: job needs out_dir and videos")
        streams = tuple(raw.get("streams", STREAMS))
        bad = [s for s in streams if s not in STREAMS]
        if bad or not streams:
            raise ConfigError(f"{path}: streams must be a subset of {STREAMS}")
        videos = []
        seen = set()
        for i, entry in enumerate(raw["videos"]):
            try:
                video = JobVideo(
                    path=str(entry["path"]),
                    video_id=str(entry["video_id"]),
                    mos=float(entry["mos"]),
                    database_id=str(entry["database_id"]),
                    mos_std=(float(entry["mos_std"])
                             if entry.get("mos_std") is not None else None),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: video {i}: {exc}") from exc
            if video.video_id in seen:
                raise DataError(f"{path}: duplicate video_id {video.video_id!r}")
            seen.add(video.video_id)
            # relative clip paths resolve against the job file
            clip = Path(video.path)
            if not clip.is_absolute():
                video.path = str(path.parent / clip)
            videos.append(video)
        if not videos:
            raise DataError(f"{path}: empty video list")
        out_dir = Path(raw["out_dir"])
        if not out_dir.is_absolute():
            out_dir = path.parent / out_dir
        job = cls(
            out_dir=str(out_dir),
            videos=videos,
            streams=streams,
            seed=int(raw.get("seed", 0)),
            window=int(raw.get("window", DEFAULT_WINDOW)),
        )
        if job.window < 4:
            raise ConfigError(f"{path}: window must be >= 4, got {job.window}")
        return job


_WORKER = {}


def _init_worker(seed, streams, window):
    torch.set_num_threads(1)
    _WORKER["streams"] = streams
    _WORKER["window"] = window
    if "spatial" in streams:
        _WORKER["trunk"] = build_spatial_trunk(seed=seed)
    if "motion" in streams:
        _WORKER["fast"] = build_fast_pathway(seed=seed)


def _process_video(args):
    video, out_dir = args
    out_dir = Path(out_dir)
    result = {"video_id": video.video_id, "status": "ok"}
    written = []
    try:
        frames = decode_frames(video.path)
        result["frames"] = int(frames.shape[0])
        if "spatial" in _WORKER["streams"]:
            feats = extract_spatial(frames, _WORKER["trunk"])
            dest = out_dir / "spatial" / f"{video.video_id}{TENSOR_SUFFIX}"
            write_tensor(dest, feats)
            written.append(dest)
            result["spatial"] = str(dest)
        if "motion" in _WORKER["streams"]:
            feats = extract_motion(frames, _WORKER["fast"], window=_WORKER["window"])
            dest = out_dir / "motion" / f"{video.video_id}{TENSOR_SUFFIX}"
            write_tensor(dest, feats)
            written.append(dest)
            result["motion"] = str(dest)
    except (DataError, BvqaDataError) as exc:
        # a failed video leaves no partial outputs behind
        for path in written:
            path.unlink(missing_ok=True)
        return {"video_id": video.video_id, "status": "failed", "error": str(exc)}
    return result


def run_job(job, processes=1, log=print):
    """Execute an ExtractionJob; returns the job report dict."""
    if processes < 1:
        raise ConfigError(f"run_job: processes must be >= 1, got {processes}")
    out_dir = Path(job.out_dir)
    for stream in job.streams:
        (out_dir / stream).mkdir(parents=True, exist_ok=True)

    tasks = [(video, str(out_dir)) for video in job.videos]
    if processes == 1:
        _init_worker(job.seed, job.streams, job.window)
        results = [_process_video(t) for t in tasks]
    else:
        ctx = mp.get_context("spawn")
        with ctx.Pool(processes=processes, initializer=_init_worker,
                      initargs=(job.seed, job.streams, job.window)) as pool:
            results = pool.map(_process_video, tasks)

    by_id = {video.video_id: video for video in job.videos}
    for res in results:
        if res["status"] == "ok":
            log(f"{res['video_id']}: ok ({res['frames']} frames)")
        else:
            log(f"{res['video_id']}: FAILED: {res['error']}")

    manifests = {}
    for stream in job.streams:
        records = []
        for res in results:
            if res["status"] != "ok":
                continue
            video = by_id[res["video_id"]]
            records.append(
                VideoRecord(
                    video_id=video.video_id,
                    mos=video.mos,
                    database_id=video.database_id,
                    feature_path=f"{stream}/{video.video_id}{TENSOR_SUFFIX}",
                    mos_std=video.mos_std,
                )
            )
        if records:
            manifest_path = out_dir / f"{stream}_manifest.json"
            save_manifest(Manifest(records=records, split="extracted"), manifest_path)
            manifests[stream] = str(manifest_path)

    report = {
        "videos": results,
        "ok": sum(1 for r in results if r["status"] == "ok"),
        "failed": sum(1 for r in results if r["status"] == "failed"),
        "streams": list(job.streams),
        "seed": job.seed,
        "window": job.window,
        "manifests": manifests,
    }
    (out_dir / "job_report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return report
