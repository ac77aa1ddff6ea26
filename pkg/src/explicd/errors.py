"""Exception hierarchy shared across the package."""


class ExplicdError(Exception):
    """Base class for all package errors."""


class ParseError(ExplicdError, ValueError):
    """Malformed input record. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ExplicdError, ValueError):
    """Input is well-formed but inconsistent (offsets, ids, shapes of data)."""


class ConfigError(ExplicdError, ValueError):
    """Invalid configuration value."""


class ShapeError(ExplicdError, ValueError):
    """Array or vector length mismatch."""


class EvaluationError(ExplicdError, RuntimeError):
    """A model cannot be evaluated on the given input."""


class TrainingError(ExplicdError, RuntimeError):
    """Training diverged or cannot proceed."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
