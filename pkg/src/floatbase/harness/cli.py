"""Command-line entry point: ``floatbase run|template|validate|rmse``.

Exit codes: 0 when every tolerance is met, 1 when a tolerance fails, 2 on
configuration, model or pipeline errors.
"""

from __future__ import annotations

import sys

import click
import numpy as np

from ..model import InvalidDimension, TopologyError, build_human_template
from ..modelio import ParseError, serialize_model
from .config import ConfigError, load_config
from .experiments import OUTPUT_ENV, LengthMismatch, PipelineError, compute_rmse, read_trace, resolve_model, run_experiment

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_ERROR)


@click.group()
def main():
    """Floating-base dynamics, estimation and interaction control toolkit."""


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help=f"Output directory (default ${OUTPUT_ENV} or ./floatbase_out).")
def run(config, out_dir):
    """Run the scenario described by CONFIG and write its traces and report."""
    try:
        cfg = load_config(config)
        report = run_experiment(cfg, out_dir)
    except (ConfigError, PipelineError) as exc:
        _fail(str(exc))
    for line in report.summary_lines():
        click.echo(line)
    click.echo("PASS" if report.passed else "FAIL")
    sys.exit(EXIT_PASS if report.passed else EXIT_FAIL)


@main.group()
def template():
    """Generate parametric models."""


@template.command()
@click.option("--mass", type=float, required=True, help="Total body mass in kg.")
@click.option("--reduced", is_flag=True, help="Keep only the dominant rotation axes of each joint.")
@click.option("--output", type=click.Path(dir_okay=False), default=None, help="Write to a file instead of stdout.")
def human(mass, reduced, output):
    """Human template model scaled to MASS."""
    try:
        model = build_human_template(mass, reduced=reduced)
    except (InvalidDimension, ValueError) as exc:
        _fail(str(exc))
    text = serialize_model(model)
    if output:
        with open(output, "w") as fh:
            fh.write(text)
        click.echo(f"wrote {output}: {model.n_links} links, {model.n} joints, {model.total_mass:.3f} kg")
    else:
        click.echo(text, nl=False)


@main.command()
@click.argument("model")
def validate(model):
    """Load MODEL (built-in name or file) and check its mass matrix."""
    from ..dynamics import mass_matrix
    from ..kinematics import Configuration

    try:
        m = resolve_model(model)
    except (ParseError, TopologyError, InvalidDimension, FileNotFoundError, ValueError) as exc:
        _fail(str(exc))
    M = mass_matrix(m, Configuration.neutral(m))
    smin = float(np.linalg.eigvalsh(M).min())
    click.echo(f"{m.name}: {m.n_links} links, {m.n} joints, total mass {m.total_mass:.6g} kg")
    click.echo(f"smallest mass-matrix eigenvalue at neutral pose: {smin:.6g}")
    sys.exit(EXIT_PASS if smin > 0.0 else EXIT_FAIL)


@main.command()
@click.argument("estimate", type=click.Path(exists=True, dir_okay=False))
@click.argument("reference", type=click.Path(exists=True, dir_okay=False))
def rmse(estimate, reference):
    """Per-column RMSE between two CSV traces sharing a header."""
    a, b = read_trace(estimate), read_trace(reference)
    shared = [c for c in a.columns if c in b.columns and c != "t"]
    if not shared:
        _fail("the files share no data columns")
    try:
        values = compute_rmse(np.column_stack([a.column(c) for c in shared]), np.column_stack([b.column(c) for c in shared]))
    except LengthMismatch as exc:
        _fail(str(exc))
    for name, v in zip(shared, np.atleast_1d(values)):
        click.echo(f"{name},{v:.17g}")


if __name__ == "__main__":
    main()
