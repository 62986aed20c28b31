"""Exception types shared across the package."""


class PlumeseekError(Exception):
    """Base class for package errors."""


class OutOfDomainError(PlumeseekError):
    """A location lies outside the simulation domain."""


class ValidationError(PlumeseekError):
    """A value violates a documented precondition or invariant."""


class LogFormatError(PlumeseekError):
    """A flight-log or table file is malformed; message names line/column."""


class ConfigError(PlumeseekError):
    """A config file is missing, untyped, or carries unknown keys."""


class GpFitError(PlumeseekError):
    """GP covariance could not be factorized even after jitter escalation."""
