"""Command-line surface: reproducible pooling, fusion, training and evaluation.

Every command takes its settings from (lowest to highest precedence)
built-in defaults, a JSON config file (--config, or the BVQA_CONFIG
environment variable), then explicit command-line flags. Unknown config
keys are rejected. Commands that write to an output directory echo the
effective configuration there as config.json.

Exit codes: 0 success, 2 configuration errors, 3 data errors, 4 numeric
failures, 1 anything else.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import gradcheck as gc
from .errors import BvqaError, ConfigError, DataError, NumericError
from .featureio import (
    FeatureSequence,
    TENSOR_SUFFIX,
    fuse,
    gap_gsp_pool,
    load_features,
    load_manifest,
    read_tensor,
    temporal_subsample,
    write_tensor,
)
from .training import (
    TrainConfig,
    coral_distance,
    ensemble_scores,
    ensemble_sweep,
    evaluate_scores,
    finetune,
    load_model,
    predict_scores,
    save_model,
)

CONFIG_ENV_VAR = "BVQA_CONFIG"


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _merge_config(ctx, config_path, values):
    """Defaults < config file < explicit flags; unknown config keys rejected."""
    path = config_path or os.environ.get(CONFIG_ENV_VAR)
    file_values = {}
    if path:
        try:
            file_values = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        unknown = sorted(set(file_values) - set(values))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged = dict(values)
    for key, val in file_values.items():
        if ctx.get_parameter_source(key) != click.core.ParameterSource.COMMANDLINE:
            merged[key] = val
    return merged


def _prepare_outdir(out, effective):
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.json").write_text(_dump_json(effective))
    return outdir


def _list_tensor_files(directory, what):
    directory = Path(directory)
    files = sorted(directory.glob(f"*{TENSOR_SUFFIX}"))
    if not files:
        raise ConfigError(f"no tensor files found in {what} directory {directory}")
    return files


def _read_scores_file(path):
    scores = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read scores {path}: {exc}") from exc
    for ln, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            scores[str(rec["video_id"])] = float(rec["q_p"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{ln}: bad score record: {exc}") from exc
    if not scores:
        raise DataError(f"{path}: no scores found")
    return scores


def _write_scores_file(path, scores, order):
    lines = [
        json.dumps({"q_p": scores[vid], "video_id": vid}, sort_keys=True)
        for vid in order
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def _print_report(report):
    for db in report.databases:
        srcc = f"{db.srcc:.6f}" if db.srcc is not None else "undefined"
        plcc = f"{db.plcc:.6f}" if db.plcc is not None else "undefined"
        click.echo(f"{db.database_id}: SRCC {srcc} PLCC {plcc} (n={db.n})")
    wsrcc = f"{report.weighted_srcc:.6f}" if report.weighted_srcc is not None else "undefined"
    wplcc = f"{report.weighted_plcc:.6f}" if report.weighted_plcc is not None else "undefined"
    click.echo(f"weighted: SRCC {wsrcc} PLCC {wplcc} (n={report.total_n})")


@click.group()
def cli():
    """Blind video quality assessment over precomputed feature tensors."""


@cli.command("pool")
@click.option("--activations", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path())
@click.option("--stream", type=click.Choice(["spatial", "motion"]), default="spatial",
              show_default=True, help="Stream label recorded in the echoed config.")
def cmd_pool(activations, out, stream):
    """Spatially pool raw (T, H, W, C) activations to (T, 2C) via GAP and GSP."""
    files = _list_tensor_files(activations, "activations")
    outdir = _prepare_outdir(out, {"activations": str(activations), "out": str(out), "stream": stream})
    for f in files:
        act = read_tensor(f)
        if act.ndim != 4:
            raise DataError(f"{f}: expected (T, H, W, C) activations, got rank {act.ndim}")
        pooled = gap_gsp_pool(act)
        write_tensor(outdir / f.name, pooled)
        t, h, w, c = act.shape
        click.echo(f"{f.stem}: {t}x{h}x{w}x{c} -> {t}x{2 * c}")


@cli.command("fuse")
@click.option("--spatial", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--motion", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path())
@click.option("--subsample", default=2, show_default=True,
              help="Keep every k-th spatial row before fusing (1 disables).")
def cmd_fuse(spatial, motion, out, subsample):
    """Temporally align pooled spatial and motion sequences and concatenate them."""
    spatial_files = {f.stem: f for f in _list_tensor_files(spatial, "spatial")}
    motion_files = {f.stem: f for f in _list_tensor_files(motion, "motion")}
    if set(spatial_files) != set(motion_files):
        only_s = sorted(set(spatial_files) - set(motion_files))[:5]
        only_m = sorted(set(motion_files) - set(spatial_files))[:5]
        raise DataError(
            f"fuse: stems differ between streams (spatial only: {only_s}, motion only: {only_m})"
        )
    outdir = _prepare_outdir(
        out,
        {"spatial": str(spatial), "motion": str(motion), "out": str(out), "subsample": subsample},
    )
    for stem in sorted(spatial_files):
        s = FeatureSequence(stem, load_features(spatial_files[stem]), "spatial").validate()
        m = FeatureSequence(stem, load_features(motion_files[stem]), "motion").validate()
        s_sub = temporal_subsample(s.data, factor=subsample)
        fused = FeatureSequence(stem, fuse(s_sub, m.data), "fused").validate()
        write_tensor(outdir / f"{stem}{TENSOR_SUFFIX}", fused.data)
        click.echo(f"{stem}: {s.data.shape[0]}x{s.data.shape[1]} + "
                   f"{m.data.shape[0]}x{m.data.shape[1]} -> "
                   f"{fused.data.shape[0]}x{fused.data.shape[1]}")


_TRAIN_OPTIONS = (
    ("epochs", int),
    ("batch_size", int),
    ("lr", float),
    ("lr_decay_factor", float),
    ("lr_decay_every", int),
    ("weight_decay", float),
    ("lam", float),
    ("epsilon", float),
    ("tau", int),
    ("beta", float),
    ("reduced_dim", int),
    ("hidden_dim", int),
    ("seed", int),
    ("target_val_srcc", float),
)


def _train_options(fn):
    defaults = TrainConfig()
    for name, typ in reversed(_TRAIN_OPTIONS):
        flag = "--" + name.replace("_", "-")
        fn = click.option(flag, name, type=typ, default=getattr(defaults, name),
                          show_default=True)(fn)
    return fn


@cli.command("train")
@click.option("--train-manifest", "train_manifests", required=True, multiple=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--val-manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@_train_options
@click.pass_context
def cmd_train(ctx, train_manifests, val_manifest, out, config_path, **options):
    """Fine-tune the temporal head on one or more manifests."""
    merged = _merge_config(ctx, config_path, options)
    config = TrainConfig.from_dict(merged)
    effective = dict(config.to_dict())
    effective.update(
        {"train_manifests": [str(p) for p in train_manifests], "val_manifest": str(val_manifest)}
    )
    outdir = _prepare_outdir(out, effective)

    manifests = [load_manifest(p) for p in train_manifests]
    val = load_manifest(val_manifest)
    model, history = finetune(manifests, val, config)

    save_model(model, outdir / "model.json")
    (outdir / "history.jsonl").write_text(
        "".join(json.dumps(row, sort_keys=True) + "\n" for row in history)
    )
    report = evaluate_scores(predict_scores(model, val), val)
    (outdir / "report.json").write_text(_dump_json(report.to_dict()))
    for row in history:
        srcc = f"{row['val_srcc']:.6f}" if row["val_srcc"] is not None else "undefined"
        plcc = f"{row['val_plcc']:.6f}" if row["val_plcc"] is not None else "undefined"
        click.echo(
            f"epoch {row['epoch']}/{config.epochs} train_loss {row['train_loss']:.6f} "
            f"val_srcc {srcc} val_plcc {plcc}"
        )
    _print_report(report)


@cli.command("eval")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--scores", "scores_path", type=click.Path(exists=True, dir_okay=False),
              help="Evaluate precomputed scores instead of running a model.")
@click.option("--out", required=True, type=click.Path())
@click.option("--threads", default=1, show_default=True)
def cmd_eval(manifest_path, model_path, scores_path, out, threads):
    """Evaluate a model (or a score file) against a manifest."""
    if (model_path is None) == (scores_path is None):
        raise ConfigError("eval: provide exactly one of --model or --scores")
    if threads < 1:
        raise ConfigError(f"eval: threads must be >= 1, got {threads}")
    manifest = load_manifest(manifest_path)
    effective = {
        "manifest": str(manifest_path),
        "model": str(model_path) if model_path else None,
        "scores": str(scores_path) if scores_path else None,
        "threads": threads,
        "out": str(out),
    }
    outdir = _prepare_outdir(out, effective)
    if model_path:
        scores = predict_scores(load_model(model_path), manifest, threads=threads)
    else:
        scores = _read_scores_file(scores_path)
    report = evaluate_scores(scores, manifest)
    (outdir / "report.json").write_text(_dump_json(report.to_dict()))
    _print_report(report)


@cli.command("predict")
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path())
@click.option("--threads", default=1, show_default=True)
def cmd_predict(model_path, manifest_path, out, threads):
    """Write raw video scores as JSON lines {video_id, q_p}."""
    if threads < 1:
        raise ConfigError(f"predict: threads must be >= 1, got {threads}")
    manifest = load_manifest(manifest_path)
    effective = {
        "model": str(model_path),
        "manifest": str(manifest_path),
        "threads": threads,
        "out": str(out),
    }
    outdir = _prepare_outdir(out, effective)
    scores = predict_scores(load_model(model_path), manifest, threads=threads)
    order = [rec.video_id for rec in manifest]
    _write_scores_file(outdir / "scores.jsonl", scores, order)
    click.echo(f"wrote {len(order)} scores to {outdir / 'scores.jsonl'}")


def _load_feature_rows(path, what):
    p = Path(path)
    if p.is_file():
        arr = read_tensor(p).astype(np.float64)
        if arr.ndim != 2:
            raise DataError(f"{p}: expected (N, D) rows for {what}, got rank {arr.ndim}")
        return arr
    rows = [load_features(f) for f in _list_tensor_files(p, what)]
    return np.concatenate(rows, axis=0)


@cli.command("coral")
@click.option("--features-a", required=True, type=click.Path(exists=True))
@click.option("--features-b", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def cmd_coral(features_a, features_b, out):
    """Covariance-alignment distance between two feature collections."""
    a = _load_feature_rows(features_a, "features-a")
    b = _load_feature_rows(features_b, "features-b")
    dist = coral_distance(a, b)
    outdir = _prepare_outdir(
        out, {"features_a": str(features_a), "features_b": str(features_b), "out": str(out)}
    )
    (outdir / "report.json").write_text(
        _dump_json({"coral": dist, "n_a": int(a.shape[0]), "n_b": int(b.shape[0]),
                    "dim": int(a.shape[1])})
    )
    click.echo(f"coral {dist:.10g} (n_a={a.shape[0]}, n_b={b.shape[0]}, dim={a.shape[1]})")


@cli.command("ensemble")
@click.option("--scores-a", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--scores-b", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--kappa", type=float, default=None,
              help="Fixed mixing weight for the first score set.")
@click.option("--sweep", is_flag=True, help="Pick kappa on a validation manifest.")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False),
              help="Validation manifest for --sweep.")
@click.option("--out", required=True, type=click.Path())
def cmd_ensemble(scores_a, scores_b, kappa, sweep, manifest_path, out):
    """Convex combination of two score files, fixed kappa or validation sweep."""
    if sweep == (kappa is not None):
        raise ConfigError("ensemble: provide exactly one of --kappa or --sweep")
    if sweep and manifest_path is None:
        raise ConfigError("ensemble: --sweep requires --manifest")
    sa = _read_scores_file(scores_a)
    sb = _read_scores_file(scores_b)
    effective = {
        "scores_a": str(scores_a),
        "scores_b": str(scores_b),
        "kappa": kappa,
        "sweep": sweep,
        "manifest": str(manifest_path) if manifest_path else None,
        "out": str(out),
    }
    outdir = _prepare_outdir(out, effective)
    report_payload = {}
    if sweep:
        manifest = load_manifest(manifest_path)
        kappa, report = ensemble_sweep(sa, sb, manifest)
        report_payload = {"report": report.to_dict()}
        click.echo(f"selected kappa {kappa:.2f}")
        _print_report(report)
    combined = ensemble_scores(sa, sb, kappa)
    order = sorted(combined)
    _write_scores_file(outdir / "ensemble.jsonl", combined, order)
    (outdir / "report.json").write_text(
        _dump_json({"kappa": kappa, "n": len(order), **report_payload})
    )
    click.echo(f"wrote {len(order)} combined scores (kappa={kappa:g})")


@cli.command("gradcheck")
@click.option("--seed", default=0, show_default=True)
@click.option("--cases", default=3, show_default=True,
              help="Random cases per entry in the battery.")
def cmd_gradcheck(seed, cases):
    """Check reverse-mode gradients against central finite differences."""
    if cases < 1:
        raise ConfigError(f"gradcheck: cases must be >= 1, got {cases}")
    worst = 0.0
    for name, err in gc.op_battery(seed=seed, cases=cases):
        click.echo(f"{name}: max_rel_err {err:.3e}")
        worst = max(worst, err)
    click.echo(f"worst: {worst:.3e} (tolerance {gc.DEFAULT_TOL:.0e})")
    if worst > gc.DEFAULT_TOL:
        raise NumericError(f"gradient check failed: {worst:.3e} > {gc.DEFAULT_TOL:.0e}")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except BvqaError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    sys.exit(0)


if __name__ == "__main__":
    main()
