"""CLI subcommand handlers. Each returns a process exit code."""

import logging

from src.errors import LabError

logger = logging.getLogger("lsr-lab.commands")


def failure_exit_code(command: str, error: BaseException) -> int:
    """Log a failed command with its traceback and map the error to an exit code."""
    logger.error("%s FAILED: %s", command, error, exc_info=True)
    if isinstance(error, LabError):
        return error.exit_code
    return 1
