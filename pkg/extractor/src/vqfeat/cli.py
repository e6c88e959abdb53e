"""Command line entry points for extraction jobs and pre-training."""

from __future__ import annotations

import sys

import click

from bvqa.errors import BvqaError

from .errors import ExtractorError
from .jobs import ExtractionJob, run_job
from .losses import DEFAULT_ETA, DEFAULT_NU
from .pretrain import DEFAULT_RESOLUTION, pretrain_backbone


@click.group()
def cli():
    """Feature extraction for blind video quality assessment.

    Frames run at native resolution through the backbones; resize upstream
    if a fixed resolution is wanted.
    """


@cli.command("extract")
@click.option("--job", "job_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--processes", default=1, show_default=True,
              help="Worker processes; each builds its own backbones.")
def cmd_extract(job_path, processes):
    """Run an extraction job described by a JSON file."""
    job = ExtractionJob.from_json(job_path)
    report = run_job(job, processes=processes, log=click.echo)
    click.echo(f"done: {report['ok']} ok, {report['failed']} failed")
    if report["ok"] == 0:
        raise ExtractorError("extract: every video failed")


@cli.command("pretrain")
@click.option("--pairs", "pairs_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--epochs", default=1, show_default=True)
@click.option("--batch-size", default=8, show_default=True)
@click.option("--lr", default=1e-4, show_default=True)
@click.option("--eta", default=DEFAULT_ETA, show_default=True)
@click.option("--nu", default=DEFAULT_NU, show_default=True)
@click.option("--resolution", default=DEFAULT_RESOLUTION, show_default=True)
@click.option("--seed", default=0, show_default=True)
def cmd_pretrain(pairs_path, out_path, epochs, batch_size, lr, eta, nu,
                 resolution, seed):
    """Fine-tune the spatial backbone on an image pair list."""
    summary = pretrain_backbone(
        pairs_path, out_path, epochs=epochs, batch_size=batch_size, lr=lr,
        eta=eta, nu=nu, resolution=resolution, seed=seed, log=click.echo,
    )
    click.echo(f"weights written to {summary['weights']}")


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
    except (ExtractorError, BvqaError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    sys.exit(0)
