"""Exception types shared by every module of the package."""


class QafError(Exception):
    """Base class for all errors raised by qaf_static."""


class ShapeError(QafError, ValueError):
    """Arrays do not have the shapes an operation requires."""


class FormatError(QafError):
    """A QAF1 container, config or manifest file could not be parsed."""


class ConfigError(QafError, ValueError):
    """A configuration key is unknown or a value violates its declared spec."""


class NumericalError(QafError, ArithmeticError):
    """Non-finite values, divergence or a failed gradient check.

    Args:
        message: Human readable description.
        stage: Name of the pipeline stage where the problem was detected.
    """

    def __init__(self, message, stage=None):
        self.stage = stage
        if stage:
            message = f'[{stage}] {message}'
        super().__init__(message)


class StaleCacheError(QafError):
    """A backward pass received a cache from another model or model version."""
