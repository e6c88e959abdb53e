"""Acceptance gate: one test per shipped guarantee, pass/fail per line.

The extractor's pooled features and pairwise losses are checked for numeric
parity against the training package on shared fixtures, emitted files are
loaded back through the training package's own readers, and five clips run
the full pipeline (extract, fuse, train, predict) to finite scores. Every
tolerance is stated inline next to the assertion it guards.
"""

import json
import subprocess

import numpy as np
import pytest
import torch

from bvqa import pretrain as core
from bvqa.featureio import gap_gsp_pool, load_features, load_manifest

from conftest import moving_clip, write_clip
from vqfeat.jobs import ExtractionJob, run_job
from vqfeat.losses import fidelity_loss, pair_probability, std_hinge_loss
from vqfeat.pooling import gap_gsp


def test_pooling_and_loss_parity_and_emitted_file_validation(tmp_path):
    # pooling on shared arrays: float64 within 1e-6, float32 within 1e-5
    rng = np.random.default_rng(401)
    worst64, worst32 = 0.0, 0.0
    for t, h, w, c in [(3, 4, 5, 16), (2, 2, 2, 2048), (5, 1, 1, 64)]:
        act = rng.normal(scale=2.0, size=(t, h, w, c))
        ref64 = gap_gsp_pool(act)
        got64 = gap_gsp(torch.from_numpy(act).permute(0, 3, 1, 2)).numpy()
        worst64 = max(worst64, float(np.max(np.abs(got64 - ref64))))
        f32 = act.astype(np.float32)
        ref32 = gap_gsp_pool(f32)
        got32 = gap_gsp(torch.from_numpy(f32).permute(0, 3, 1, 2)).numpy()
        worst32 = max(worst32, float(np.max(np.abs(got32 - ref32))))
    assert worst64 < 1e-6
    assert worst32 < 1e-5

    # preference probability, fidelity, and uncertainty hinge within 1e-6
    worst = 0.0
    for _ in range(100):
        mu_x, mu_y = rng.uniform(-2.0, 2.0, size=2)
        sx, sy = rng.uniform(0.05, 1.5, size=2)
        if sx == sy:
            sy += 0.01
        p_true = rng.uniform(0.0, 1.0)
        sx_true, sy_true = rng.uniform(0.05, 1.5, size=2)
        if sx_true == sy_true:
            sy_true += 0.01

        want_p = core.pair_probability(mu_x, mu_y, sx, sy)
        want_f = core.fidelity_loss(p_true, want_p)
        want_h = float(core.std_hinge_loss(sx_true, sy_true, sx, sy).data)

        as64 = lambda v: torch.tensor(v, dtype=torch.float64)
        got_p = float(pair_probability(as64(mu_x), as64(mu_y), as64(sx), as64(sy)))
        got_f = float(fidelity_loss(as64(p_true), as64(got_p)))
        g = float(np.sign(sx_true - sy_true))
        got_h = float(std_hinge_loss(as64(g), as64(sx), as64(sy)))
        worst = max(worst, abs(got_p - want_p), abs(got_f - want_f),
                    abs(got_h - want_h))
    assert worst < 1e-6

    # emitted files load through the training package with exact widths
    write_clip(tmp_path / "v.avi", moving_clip(14, seed=7))
    out = tmp_path / "features"
    job_path = tmp_path / "job.json"
    job_path.write_text(json.dumps({
        "out_dir": str(out), "seed": 0, "streams": ["spatial", "motion"],
        "videos": [{"path": str(tmp_path / "v.avi"), "video_id": "v",
                    "mos": 3.0, "database_id": "gate"}],
    }))
    run_job(ExtractionJob.from_json(job_path), log=lambda *_: None)
    for stream, width, rows in (("spatial", 4096, 14), ("motion", 512, 7)):
        manifest = load_manifest(out / f"{stream}_manifest.json", check_files=True)
        feats = load_features(manifest.records[0].feature_path)
        assert feats.shape == (rows, width)
        assert np.all(np.isfinite(feats))


@pytest.mark.slow
def test_five_clip_end_to_end_smoke(tmp_path):
    """Extract, fuse, train, predict through the installed command lines."""
    mos = [1.2, 2.4, 3.1, 4.0, 4.8]
    videos = []
    for i, score in enumerate(mos):
        clip_path = tmp_path / f"clip_{i}.avi"
        write_clip(clip_path, moving_clip(40, h=48, w=64, seed=100 + i))
        videos.append({"path": str(clip_path), "video_id": f"clip_{i}",
                       "mos": score, "database_id": "smoke"})
    out = tmp_path / "features"
    job = tmp_path / "job.json"
    job.write_text(json.dumps({"out_dir": str(out), "seed": 0,
                               "streams": ["spatial", "motion"],
                               "videos": videos}))

    def run(cmd):
        proc = subprocess.run(cmd, capture_output=True, text=True)
        assert proc.returncode == 0, f"{cmd}: rc={proc.returncode}\n{proc.stderr}"
        return proc.stdout

    stdout = run(["vqfeat", "extract", "--job", str(job)])
    assert "done: 5 ok, 0 failed" in stdout

    run(["bvqa", "fuse", "--spatial", str(out / "spatial"),
         "--motion", str(out / "motion"), "--out", str(out / "fused")])
    for i in range(5):
        fused = load_features(out / "fused" / f"clip_{i}.bvqf")
        assert fused.shape == (20, 4608)

    manifest = out / "fused_manifest.json"
    manifest.write_text(json.dumps({
        "split": "smoke",
        "records": [{"video_id": v["video_id"], "mos": v["mos"],
                     "database_id": "smoke",
                     "feature_path": f"fused/{v['video_id']}.bvqf"}
                    for v in videos],
    }))

    run_dir = tmp_path / "run"
    run(["bvqa", "train", "--train-manifest", str(manifest),
         "--val-manifest", str(manifest), "--out", str(run_dir),
         "--epochs", "1", "--batch-size", "5", "--tau", "3",
         "--reduced-dim", "16", "--hidden-dim", "8", "--seed", "0"])

    pred_dir = tmp_path / "pred"
    run(["bvqa", "predict", "--model", str(run_dir / "model.json"),
         "--manifest", str(manifest), "--out", str(pred_dir)])

    rows = [json.loads(line)
            for line in (pred_dir / "scores.jsonl").read_text().splitlines()]
    assert [r["video_id"] for r in rows] == [v["video_id"] for v in videos]
    assert all(np.isfinite(r["q_p"]) for r in rows)
