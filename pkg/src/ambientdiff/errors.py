"""Exception types shared across the package."""


class AmbientError(Exception):
    """Base class for all package errors."""


class DomainError(AmbientError, ValueError):
    """An argument falls outside the region where an operation is defined."""


class NumericalError(AmbientError, ArithmeticError):
    """A computation produced non-finite values or degenerated numerically."""


class TrainingDiverged(NumericalError):
    """Training loss exceeded the divergence threshold or became NaN.

    The last finite checkpoint is attached as ``last_good``.
    """

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class FormatError(AmbientError):
    """Base class for malformed files."""


class BadMagic(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class ChecksumMismatch(FormatError):
    """Stored checksum does not match the file contents."""


class ConfigError(AmbientError, ValueError):
    """Invalid or unknown run-config key or value."""
