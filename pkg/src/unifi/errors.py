"""Exception types shared across the package.

Two families matter for the CLI exit-code contract: configuration problems
(exit code 2) and data problems (exit code 3). Anything else is a bug and is
allowed to propagate as a plain traceback.
"""


class UnifiError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(UnifiError):
    """Invalid configuration value, file, or combination of options."""

    exit_code = 2


class DataError(UnifiError):
    """Invalid data handed to a pipeline stage."""

    exit_code = 3


class ParseError(DataError):
    """Malformed record in a line-delimited file.

    Carries the 1-based line number (and optionally the path) so callers can
    point at the offending record.
    """

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)


class FormatError(ParseError):
    """Structurally valid records that break the format contract.

    Examples: CSI matrix shape changing mid-trace, timestamps going backwards.
    """


class WindowError(DataError):
    """A feature window with too few frames to evaluate."""


class DegenerateGeometryError(DataError):
    """Geometry that makes a quantity undefined (target on top of an antenna)."""


class DegenerateStaticError(DataError):
    """Static CSI power too small for a ratio to be meaningful."""


class TrainingError(DataError):
    """Training cannot proceed (missing class, diverging loss, ...)."""


class EvaluationError(DataError):
    """Metric inputs that violate the metric's preconditions."""


class ModelFormatError(DataError):
    """A model file that is corrupt, truncated, or from an unknown version."""
