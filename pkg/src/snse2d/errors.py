"""Exception types raised by the lab."""


class SNSEError(Exception):
    """Base class for all errors raised by snse2d."""


class ParameterError(SNSEError, ValueError):
    """Invalid numerical parameter (non-positive viscosity, bad grid, ...)."""


class RangeError(SNSEError, IndexError):
    """Requested time or window falls outside the stored noise data."""


class StabilityError(SNSEError, FloatingPointError):
    """Time step violates the advective CFL limit."""


class DivergenceError(SNSEError, FloatingPointError):
    """Trajectory blew up or the conjugation factor underflowed."""


class FormatError(SNSEError, ValueError):
    """Malformed snapshot or CSV file."""


class DimensionError(FormatError):
    """Snapshot size disagrees with the declared grid."""


class DataError(SNSEError, ValueError):
    """A trajectory record lacks data needed by a diagnostic."""


class HypothesisError(SNSEError, ValueError):
    """Forcing does not satisfy the growth hypothesis for the requested rate."""


class ConfigError(SNSEError, ValueError):
    """Invalid or unknown entry in an experiment configuration."""
