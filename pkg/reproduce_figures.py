#!/usr/bin/env python3
"""
Run the whole pipeline for one configuration and print where the artifacts went.

orbit -> lyapunov -> wigner -> quantum -> report, each in its own hashed run directory.
The report consumes the ks.json, width.json and fits.json of the earlier runs.
"""

import os
import sys

import click

from app import create_config
from app.runner import run, run_directory

STAGES = ("orbit", "lyapunov", "wigner", "quantum")


@click.command()
@click.option("--output-root", default=lambda: os.getenv("PXPSCARS_OUTPUT_DIR", "runs"), show_default="runs")
@click.option("--L", "L", type=int, default=30, show_default=True, help="Headline unit-cell size for the KS entropy.")
@click.option("--N", "N", type=int, default=20, show_default=True, help="Chain length of the exact quench.")
def main(output_root, L, N):
    """Run the whole pipeline for one configuration."""
    click.echo("=== PXP scars pipeline ===")
    overrides = {
        "orbit": {'output_root': output_root},
        "lyapunov": {'output_root': output_root, 'L': L,
                     'Ls': list(range(2, L + 1, 2))},
        "wigner": {'output_root': output_root},
        "quantum": {'output_root': output_root, 'N': N},
    }
    directories = {}
    for stage in STAGES:
        config = create_config(stage, overrides=overrides[stage])
        directories[stage] = run_directory(stage, config)
        click.echo(f"[{stage}] -> {directories[stage]}")
        status = run(stage, config)
        if status != 0:
            click.echo(f"{stage} failed with exit status {status}")
            sys.exit(status)

    report_config = create_config("report", overrides={
        'output_root': output_root,
        'ks': os.path.join(directories["lyapunov"], "ks.json"),
        'width': os.path.join(directories["wigner"], "width.json"),
        'fits': os.path.join(directories["quantum"], "fits.json"),
    })
    click.echo(f"[report] -> {run_directory('report', report_config)}")
    sys.exit(run("report", report_config))


if __name__ == "__main__":
    main()
