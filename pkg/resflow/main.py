import logging
from pathlib import Path
from typing import Optional

import click

from resflow import __version__
from resflow.commands import build_command, sweep_command, verify_command
from resflow.config import settings
from resflow.errors import ResflowError

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class ResflowGroup(click.Group):
    """Turns a ResflowError raised by any command into its exit code."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except ResflowError as e:
            logging.error(e.detail)
            click.echo(f"Error: {e.detail}", err=True)
            ctx.exit(int(e.exit_code))


@click.group(cls=ResflowGroup)
@click.version_option(__version__, prog_name="resflow")
@click.option("--log-level", default=None, help="Logging level (default from RESFLOW_LOG_LEVEL or INFO).")
@click.option(
    "--out-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Default output directory for every command.",
)
@click.pass_context
def cli(ctx: click.Context, log_level: Optional[str], out_dir: Optional[Path]):
    """Build, verify and sweep residual flows that drive feature-space MMD toward zero."""
    level = (log_level or settings.log_level).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)
    ctx.ensure_object(dict)
    ctx.obj["out_dir"] = out_dir or settings.out_dir


# Register commands
cli.add_command(build_command)
cli.add_command(verify_command)
cli.add_command(sweep_command)
