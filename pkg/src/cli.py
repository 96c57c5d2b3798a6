"""
Main CLI entry point for the pchm laboratory.
"""

import click

from . import __version__
from .commands.config import config
from .commands.experiment import (
    cluster_stats,
    corrector,
    exclusion,
    gen_env,
    hydro,
    resolvent,
    run,
    walk,
)
from .commands.verify import verify
from .context import Context


class CustomGroup(click.Group):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.context_settings = {
            "help_option_names": ["-h", "--help"],
        }


@click.group(cls=CustomGroup)
@click.version_option(
    __version__,
    "-v",
    "--version",
    message="%(prog)s, version %(version)s",
)
@click.pass_context
def cli(ctx: click.Context):
    """Random conductance model laboratory.

    Estimates effective diffusion matrices of random walks among random
    conductances and compares lattice semigroups, resolvents and exclusion
    density profiles against the continuum heat equation.

    Common commands:
    - run --config FILE: Run any experiment; the kind is read from FILE
    - gen-env, cluster-stats, corrector, resolvent, walk, exclusion, hydro:
      Run a config of that kind
    - verify MANIFEST: Re-check checksums and invariants of a run

    - config view: View all configuration settings
    - config get <option>: View a specific configuration option
    - config set <option> <value>: Set a configuration option
    - config reset: Reset to default settings
    - config init: Initialize configuration

    Run 'pchm COMMAND --help' for more information on a command.
    """
    ctx.obj = Context()


cli.add_command(run)
cli.add_command(gen_env)
cli.add_command(cluster_stats)
cli.add_command(corrector)
cli.add_command(resolvent)
cli.add_command(walk)
cli.add_command(exclusion)
cli.add_command(hydro)
cli.add_command(verify)
cli.add_command(config)


if __name__ == "__main__":
    cli()
