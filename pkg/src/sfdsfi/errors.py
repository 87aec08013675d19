"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: configuration and parse problems exit
with 1, numeric failures (divergence, non-finite values) exit with 3.
"""


class Error(Exception):
    """Base class for all pipeline errors."""


class ShapeError(Error):
    """Operands have incompatible or non-matrix shapes."""


class NumericError(Error):
    """A computation produced non-finite values or cannot proceed."""


class TrainingError(NumericError):
    """Optimization diverged; message carries the epoch/batch location."""


class ParseError(Error):
    """A file could not be parsed; message carries row/column context."""


class ConfigError(Error):
    """A configuration value violates its documented constraints."""


class CalibrationError(Error):
    """Residual statistics are unusable for density or threshold fitting."""


class DegenerateInputError(Error):
    """Input carries no usable signal (for example an all-zero window)."""
