"""Exception hierarchy shared by all charnorm modules."""


class CharnormError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CharnormError, ValueError):
    """Operand shapes do not fit together."""


class EmptySourceError(CharnormError, ValueError):
    """An encoder or attention input has no positions."""


class ConfigError(CharnormError, ValueError):
    """A configuration value is out of range or unknown."""


class DataError(CharnormError, ValueError):
    """Corpus content violates an assumption (overlapping edits, empty corpus, ...)."""


class ParseError(DataError):
    """Malformed M2 input. Carries the 1-based line number."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class FormatError(DataError):
    """Malformed embedding or table file."""


class CheckpointError(CharnormError):
    """Checkpoint file is truncated, has the wrong version or does not match the model."""


class NumericError(CharnormError, FloatingPointError):
    """A non-finite loss or value showed up during training."""
