"""Exception taxonomy shared by every module."""


class GaeClustError(Exception):
    """Base class for all package errors."""


class FormatError(GaeClustError):
    """A dataset file violates the on-disk format."""


class DataError(GaeClustError):
    """Input data violates a value-level invariant (NaN, bad labels, ...)."""


class ShapeError(GaeClustError):
    """Operand shapes do not align."""


class NumericsError(GaeClustError):
    """A numerical routine produced or received non-finite values."""


class RangeError(GaeClustError):
    """A scalar argument is outside its admissible range."""


class StateError(GaeClustError):
    """An object is used before it reached the required state."""


class TrainingError(GaeClustError):
    """The training loop diverged or was misconfigured."""


class OperatorError(GaeClustError):
    """A graph operator received inputs it cannot act on."""


class ConfigError(GaeClustError):
    """An experiment configuration is inconsistent."""
