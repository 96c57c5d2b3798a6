"""
Experiment commands: `pchm run` plus one command per experiment kind.
"""

import json
from typing import Any, Callable, Optional

import click
from pydantic import ValidationError as PydanticValidationError

from ..context import Context
from ..core.base import LabError, ValidationError
from ..laboratory import RunResult, load_experiment, resolve_options

KINDS = [
    "gen-env",
    "cluster-stats",
    "corrector",
    "resolvent",
    "walk",
    "exclusion",
    "hydro",
]


def fail(ctx: Context, error: Exception) -> None:
    """Emit a JSON diagnostic on stderr, show the message and exit."""
    if isinstance(error, LabError):
        exit_code = error.exit_code
    elif isinstance(error, PydanticValidationError):
        exit_code = ValidationError.exit_code
    else:
        exit_code = 1
    diagnostic: dict = {
        "error": type(error).__name__,
        "message": str(error),
        "exit_code": exit_code,
    }
    errors = getattr(error, "details", {}).get("errors")
    if errors:
        diagnostic["details"] = errors
    click.echo(json.dumps(diagnostic, default=str), err=True)
    ctx.display_message(f"Error: {error}", "error")
    click.get_current_context().exit(exit_code)


def experiment_options(func: Callable) -> Callable:
    """Options shared by every experiment command."""
    func = click.option(
        "--tol", type=float, default=None, help="CG relative tolerance"
    )(func)
    func = click.option(
        "--workers", "-j", type=int, default=None, help="Parallel replica workers"
    )(func)
    func = click.option(
        "--seed", type=int, default=None, help="Override the master seed"
    )(func)
    func = click.option(
        "--out", "-o", type=click.Path(file_okay=False), help="Output directory"
    )(func)
    func = click.option(
        "--config",
        "-c",
        "config_path",
        required=True,
        type=click.Path(dir_okay=False),
        help="Experiment configuration file (JSON)",
    )(func)
    return func


def show_result(ctx: Context, result: RunResult) -> None:
    ctx.display_table(result.headers, result.rows, f"{result.kind} results")
    if result.matrix is not None:
        ctx.display_matrix("Dcal", result.matrix)
    for name in result.failures:
        ctx.display_message(f"Invariant failed: {name}", "warning")
    ctx.display_message(f"Manifest written to {result.manifest_path}", "success")


def execute(
    ctx: Context,
    config_path: str,
    out: Optional[str],
    seed: Optional[int],
    workers: Optional[int],
    tol: Optional[float],
    kind: Optional[str] = None,
) -> None:
    try:
        experiment = load_experiment(config_path)
        if kind is not None and experiment.kind != kind:
            raise ValidationError(
                f"{config_path} describes a {experiment.kind} experiment, not {kind}"
            )
        options = resolve_options(experiment, ctx.config, out, seed, workers, tol)
        result = ctx.lab.run(experiment, options)
    except (LabError, PydanticValidationError, OSError) as e:
        fail(ctx, e)
        return
    show_result(ctx, result)


@click.command()
@experiment_options
@click.pass_obj
def run(ctx: Context, config_path: str, out, seed, workers, tol):
    """
    Run the experiment described by a configuration file.

    The experiment kind is read from the file.
    """
    execute(ctx, config_path, out, seed, workers, tol)


def kind_command(kind: str, summary: str) -> click.Command:
    """Build `pchm <kind>`, which insists the config is of that kind."""

    @click.command(name=kind, help=summary)
    @experiment_options
    @click.pass_obj
    def command(ctx: Context, config_path: str, out, seed, workers, tol: Any):
        execute(ctx, config_path, out, seed, workers, tol, kind=kind)

    return command


gen_env = kind_command("gen-env", "Sample a conductance field and dump it.")
cluster_stats = kind_command(
    "cluster-stats", "Estimate the giant cluster density m_hat across seeds."
)
corrector = kind_command(
    "corrector", "Solve the corrector problem and estimate the diffusion matrix."
)
resolvent = kind_command(
    "resolvent", "Compare lattice resolvent solutions with the continuum ones."
)
walk = kind_command(
    "walk", "Compare the walk semigroup with the continuum heat semigroup."
)
exclusion = kind_command(
    "exclusion", "Check the exclusion pairing against the walk semigroup."
)
hydro = kind_command(
    "hydro", "Compare exclusion density profiles with the heat equation."
)
