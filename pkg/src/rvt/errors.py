"""Exception types shared across the package."""


class RVTError(Exception):
    """Base class for all package errors."""


class ConfigError(RVTError, ValueError):
    """An inconsistent or unsupported configuration."""


class UnsupportedFeatureError(ConfigError):
    """A recognised but deliberately unimplemented option."""


class DimensionError(RVTError, ValueError):
    """Operand shapes do not fit together."""


class NumericDomainError(RVTError, ArithmeticError):
    """NaN/Inf where finite values are required."""


class UsageError(RVTError, RuntimeError):
    """API misuse, e.g. calling backward on a detached tensor."""


class DataError(RVTError, ValueError):
    """Malformed dataset, labels or binary file."""


class FormatError(DataError):
    """Bad magic, version or truncation in a binary file."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UndefinedRatioError(RVTError, ZeroDivisionError):
    """A normalising denominator is zero."""
