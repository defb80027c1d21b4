"""Error categories for lsr-lab, each mapped to a CLI exit code."""

from typing import Optional


class LabError(Exception):
    """Base class for all lsr-lab errors."""

    exit_code = 1


class InvalidInputError(LabError, ValueError):
    """Arguments outside an operation's domain."""

    exit_code = 3


class ConfigurationError(LabError):
    """A requested mode needs data the problem does not carry."""

    exit_code = 4


class DegenerateProblemError(LabError):
    """Zero variance or zero delta where a ratio or schedule needs it."""

    exit_code = 5


class ScheduleInfeasibleError(LabError):
    """The TSLA schedule hypothesis does not hold."""

    exit_code = 6


class PreconditionError(LabError):
    """A bound was requested outside the step-size regime it is proven for."""

    exit_code = 7


class ConfigParseError(LabError):
    """Malformed, unknown, or missing experiment config entries."""

    exit_code = 2

    def __init__(
        self, message: str, field: Optional[str] = None, line: Optional[int] = None
    ):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        self.message = message
        super().__init__(f"{prefix}{message}")

    def __reduce__(self):
        return (ConfigParseError, (self.message, self.field, self.line))


class RunFailedError(LabError):
    """An error raised inside one run, tagged with the run identity."""

    def __init__(self, label: str, seed: int, cause: BaseException):
        self.label = label
        self.seed = seed
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"run '{label}' seed={seed} failed: {cause}")

    def __reduce__(self):
        # Crosses process boundaries from pool workers
        return (RunFailedError, (self.label, self.seed, self.cause))


VERIFICATION_FAILED_EXIT = 8
