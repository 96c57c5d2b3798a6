"""
Configuration management commands.
"""

import click

from ..config import DEFAULTS, DISPLAY_MODES, LOG_LEVELS
from ..context import Context

OPTIONS = list(DEFAULTS)


@click.group()
def config():
    """Configuration management commands."""
    pass


@config.command()
@click.pass_obj
def view(ctx: Context):
    """View current configuration settings."""
    headers = ["Setting", "Value"]
    rows = [[name, value] for name, value in ctx.config.as_dict().items()]
    rows.extend(
        [
            ["config_dir", str(ctx.config.config_dir)],
            ["logs_dir", str(ctx.config.logs_dir)],
        ]
    )
    ctx.display_table(headers, rows)


@config.command()
@click.argument("option", type=click.Choice(OPTIONS))
@click.argument("value")
@click.pass_obj
def set(ctx: Context, option: str, value: str):
    """Set a configuration option.

    OPTION is the name of the option to set
    VALUE is the new value for the option

    \b
    Available options:
    - display_mode: plain or rich
    - workers: replica workers, at least 1
    - tol: CG relative tolerance, positive
    - log_level: DEBUG, INFO, WARNING or ERROR
    """
    try:
        if option == "display_mode":
            ctx.update_display_mode(value)
        else:
            setattr(ctx.config, option, value)
        ctx.display_message(f"Option {option} set to: {getattr(ctx.config, option)}")
    except ValueError as e:
        ctx.display_message(f"Error: {str(e)}", "error")
        click.get_current_context().exit(2)


@config.command()
@click.argument("option", type=click.Choice(OPTIONS))
@click.pass_obj
def get(ctx: Context, option: str):
    """Get the value of a configuration option."""
    ctx.display_message(f"{option} = {getattr(ctx.config, option)}")


@config.command()
@click.confirmation_option(prompt="Are you sure you want to reset all settings?")
@click.pass_obj
def reset(ctx: Context):
    """Reset all settings to default values."""
    ctx.config.reset()
    ctx.update_display_mode(DEFAULTS["display_mode"])
    ctx.display_message("Configuration has been reset to default values.")


@config.command()
@click.pass_obj
def init(ctx: Context):
    """Initialize configuration with default settings."""
    if not ctx.config.config_file.exists():
        ctx.config.reset()
        ctx.display_message("Configuration initialized with default settings.")
    else:
        ctx.display_message(
            "Configuration file already exists. Use 'reset' to start fresh."
        )
