"""Job parsing, the runner's failure isolation, and interchange validation."""

import json

import numpy as np
import pytest

from bvqa.featureio import load_features, load_manifest

from vqfeat.errors import ConfigError, DataError
from vqfeat.jobs import ExtractionJob, run_job

from conftest import moving_clip, write_clip


def _job_file(tmp_path, videos, **extra):
    payload = {"out_dir": "features", "videos": videos}
    payload.update(extra)
    path = tmp_path / "job.json"
    path.write_text(json.dumps(payload))
    return path


def _video_entry(tmp_path, vid, t=16, mos=3.0, seed=0):
    clip = write_clip(tmp_path / f"{vid}.avi", moving_clip(t, h=32, w=32, seed=seed))
    return {"path": str(clip), "video_id": vid, "mos": mos, "database_id": "jobdb"}


class TestJobParsing:
    def test_minimal_job(self, tmp_path):
        job = ExtractionJob.from_json(_job_file(tmp_path, [_video_entry(tmp_path, "a")]))
        assert job.streams == ("spatial", "motion")
        assert job.out_dir == str(tmp_path / "features")

    def test_unknown_key_rejected(self, tmp_path):
        path = _job_file(tmp_path, [_video_entry(tmp_path, "a")], gpu=True)
        with pytest.raises(ConfigError, match="gpu"):
            ExtractionJob.from_json(path)

    def test_unknown_stream_rejected(self, tmp_path):
        path = _job_file(tmp_path, [_video_entry(tmp_path, "a")], streams=["audio"])
        with pytest.raises(ConfigError, match="streams"):
            ExtractionJob.from_json(path)

    def test_duplicate_id_rejected(self, tmp_path):
        entry = _video_entry(tmp_path, "a")
        path = _job_file(tmp_path, [entry, dict(entry)])
        with pytest.raises(DataError, match="duplicate"):
            ExtractionJob.from_json(path)

    def test_missing_required_fields(self, tmp_path):
        path = tmp_path / "job.json"
        path.write_text(json.dumps({"videos": []}))
        with pytest.raises(ConfigError, match="out_dir"):
            ExtractionJob.from_json(path)

    def test_relative_clip_paths_resolve_against_job(self, tmp_path):
        write_clip(tmp_path / "rel.avi", moving_clip(10, h=32, w=32))
        path = _job_file(
            tmp_path,
            [{"path": "rel.avi", "video_id": "rel", "mos": 2.0, "database_id": "d"}],
        )
        job = ExtractionJob.from_json(path)
        assert job.videos[0].path == str(tmp_path / "rel.avi")


class TestRunner:
    def test_failures_are_isolated_and_outputs_validate(self, tmp_path):
        corrupt = tmp_path / "corrupt.avi"
        corrupt.write_bytes(b"not a video at all")
        videos = [
            _video_entry(tmp_path, "ok_a", t=16, mos=1.5, seed=1),
            {"path": str(corrupt), "video_id": "bad", "mos": 2.0, "database_id": "jobdb"},
            _video_entry(tmp_path, "ok_b", t=17, mos=3.5, seed=2),
            _video_entry(tmp_path, "short", t=4, mos=4.0, seed=3),
        ]
        job = ExtractionJob.from_json(_job_file(tmp_path, videos, seed=0))
        report = run_job(job, log=lambda *_: None)

        assert report["ok"] == 2
        assert report["failed"] == 2
        status = {r["video_id"]: r for r in report["videos"]}
        assert status["bad"]["status"] == "failed"
        assert "frames" in status["short"]["error"] or "minimum" in status["short"]["error"]

        out = tmp_path / "features"
        assert json.loads((out / "job_report.json").read_text())["ok"] == 2
        # short passed the spatial stage before motion rejected it; no orphan remains
        assert not (out / "spatial" / "short.bvqf").exists()

        spatial = load_manifest(out / "spatial_manifest.json")
        motion = load_manifest(out / "motion_manifest.json")
        assert {r.video_id for r in spatial.records} == {"ok_a", "ok_b"}
        for manifest, dim, rows in ((spatial, 4096, {16, 17}), (motion, 512, {8, 9})):
            for rec in manifest.records:
                feats = load_features(rec.feature_path)
                assert feats.shape[1] == dim
                assert feats.shape[0] in rows
                assert np.all(np.isfinite(feats))
        by_id = {r.video_id: r for r in spatial.records}
        assert by_id["ok_a"].mos == 1.5
        assert by_id["ok_a"].database_id == "jobdb"

    def test_process_pool_matches_serial_run(self, tmp_path):
        videos = [_video_entry(tmp_path, f"v{i}", t=12, seed=10 + i) for i in range(3)]
        job_a = ExtractionJob.from_json(
            _job_file(tmp_path, videos, out_dir="serial", streams=["motion"])
        )
        run_job(job_a, processes=1, log=lambda *_: None)
        job_b = ExtractionJob.from_json(
            _job_file(tmp_path, videos, out_dir="pooled", streams=["motion"])
        )
        run_job(job_b, processes=2, log=lambda *_: None)
        for i in range(3):
            a = (tmp_path / "serial" / "motion" / f"v{i}.bvqf").read_bytes()
            b = (tmp_path / "pooled" / "motion" / f"v{i}.bvqf").read_bytes()
            assert a == b

    def test_bad_process_count_rejected(self, tmp_path):
        job = ExtractionJob.from_json(_job_file(tmp_path, [_video_entry(tmp_path, "a")]))
        with pytest.raises(ConfigError):
            run_job(job, processes=0)
