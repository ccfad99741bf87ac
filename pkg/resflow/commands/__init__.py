from resflow.commands.build import build_command
from resflow.commands.sweep import sweep_command
from resflow.commands.verify import verify_command

__all__ = ["build_command", "sweep_command", "verify_command"]
