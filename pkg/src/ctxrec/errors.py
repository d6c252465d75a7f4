"""Exception types shared across the package."""


class CtxrecError(Exception):
    """Base class for package errors."""


class ShapeError(CtxrecError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(CtxrecError, ValueError):
    """A configuration value is out of its legal range or inconsistent."""


class StateError(CtxrecError, RuntimeError):
    """An operation was issued in an invalid order (e.g. double backward)."""


class ParseError(CtxrecError, ValueError):
    """A dataset file could not be parsed; carries the offending line number."""

    def __init__(self, message, line_no=None):
        super().__init__(message if line_no is None else f"line {line_no}: {message}")
        self.line_no = line_no


class SchemaError(CtxrecError, ValueError):
    """Record contents contradict the declared dataset schema."""


class SamplingError(CtxrecError, RuntimeError):
    """Rejection sampling exhausted its retry budget."""


class TransferError(CtxrecError, ValueError):
    """Source and target models are incompatible for parameter transfer."""


class EvalError(CtxrecError, RuntimeError):
    """Evaluation preconditions are not met (empty split, too few negatives)."""
