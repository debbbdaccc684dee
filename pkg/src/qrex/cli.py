"""Command line entry point: ``qrex run``, ``qrex verify`` and ``qrex list-experiments``."""

from __future__ import annotations

import sys

import click

from qrex.errors import ConfigurationError
from qrex.harness import ALGORITHMS, EXPERIMENT_DEFAULTS, emit_csv, parse_config, run_experiment
from qrex.verify import format_report, verify_suite

EXIT_CONFIG = 1
EXIT_VERIFY = 2
EXIT_RUNTIME = 3


@click.group()
@click.version_option(package_name="qrex")
def cli() -> None:
    """Q-learning with online targets and reverse experience replay."""


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="YAML experiment config.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override a config key (dotted keys reach into env, e.g. env.sigma=0.5).")
@click.option("--seeds", type=int, default=None, help="Number of seeds (overrides the config).")
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker processes.")
@click.option("--out", default="-", show_default=True, help="CSV destination; '-' is stdout.")
def run(config_path, overrides, seeds, jobs, out) -> None:
    """Run an experiment over several seeds and write a CSV of learning curves."""
    items = list(overrides)
    if seeds is not None:
        items.append(f"seeds={seeds}")
    try:
        cfg = parse_config(config_path, items)
        if jobs < 1:
            raise ConfigurationError("--jobs must be >= 1")
    except ConfigurationError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        result = run_experiment(cfg, jobs=jobs)
        emit_csv(result, out)
    except ConfigurationError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except Exception as exc:  # noqa: BLE001 - any run failure maps to one exit code
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    if result.diverged_seeds:
        click.echo(f"note: diverged seeds {result.diverged_seeds}", err=True)


@cli.command()
@click.option("--full", is_flag=True, help="Run the larger randomized instances.")
def verify(full: bool) -> None:
    """Randomized checks of the Bellman contraction, bias-variance identity and iterate bounds."""
    results = verify_suite("full" if full else "quick")
    click.echo(format_report(results))
    if not all(r.passed for r in results):
        sys.exit(EXIT_VERIFY)


@cli.command("list-experiments")
def list_experiments() -> None:
    """Show the built-in experiments and their default algorithm."""
    for name, d in EXPERIMENT_DEFAULTS.items():
        click.echo(f"{name:<16} default algorithm: {d['algorithm']}")
    click.echo(f"algorithms: {', '.join(ALGORITHMS)}")


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
