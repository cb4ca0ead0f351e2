"""
Exception hierarchy for intermittent-sdde.

Every error raised on purpose by the package derives from :class:`Error`, so
callers can catch the whole family at once. Errors that describe bad input also
derive from :class:`ValueError`.
"""


class Error(Exception):
    """Base class for all package errors."""


class ConfigurationError(Error, ValueError):
    """Raised when a run, schedule, step or configuration document is unusable."""


class ValidationError(Error, ValueError):
    """Raised when a model object violates one of its invariants."""


class CertificateError(Error):
    """Raised when a stability certificate cannot be constructed."""


class UnsupportedModelError(Error):
    """Raised when a certificate check receives a model it cannot bound."""


class PathRangeError(Error, IndexError):
    """Raised when a mode path is queried outside its horizon."""


class EstimationError(Error):
    """Raised when Monte Carlo estimation has nothing left to estimate from."""


class FitError(EstimationError):
    """Raised when a decay rate cannot be fitted to a moment series."""
