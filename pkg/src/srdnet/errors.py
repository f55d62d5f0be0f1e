"""Exception types raised across the package."""


class SrdnetError(Exception):
    """Base class for package errors."""


class ShapeError(SrdnetError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigError(SrdnetError, ValueError):
    """A configuration is internally inconsistent or unsupported."""


class UsageError(SrdnetError, RuntimeError):
    """An API was called in a state where it cannot proceed."""


class DecodeError(SrdnetError, ValueError):
    """A binary file could not be decoded."""


class MetricUndefinedError(SrdnetError, ValueError):
    """Every pixel or band was degenerate, so the metric has no value."""


class NonFiniteError(SrdnetError, FloatingPointError):
    """Training produced a NaN or Inf."""
