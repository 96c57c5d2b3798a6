"""
Manifest verification command.
"""

import click

from ..context import Context
from ..core.base import LabError
from .experiment import fail


@click.command()
@click.argument("manifest_path", type=click.Path(dir_okay=False))
@click.option("--failed-only", is_flag=True, help="Only list failing checks")
@click.pass_obj
def verify(ctx: Context, manifest_path: str, failed_only: bool):
    """
    Re-check a run manifest.

    Recomputes artifact digests and field checksums, re-asserts the estimate
    and report invariants and replays the recorded checks. Exits 0 iff every
    check passes.
    """
    try:
        checks = ctx.lab.verify(manifest_path)
    except (LabError, OSError) as e:
        fail(ctx, e)
        return

    headers = ["Check", "Result", "Value"]
    rows = [
        [c.name, "pass" if c.passed else "FAIL", "" if c.value is None else c.value]
        for c in checks
        if not (failed_only and c.passed)
    ]
    if rows:
        ctx.display_table(headers, rows, "Manifest checks")

    failed = sum(not c.passed for c in checks)
    if failed:
        ctx.display_message(f"{failed} of {len(checks)} checks failed", "error")
        click.get_current_context().exit(1)
    ctx.display_message(f"All {len(checks)} checks passed", "success")
