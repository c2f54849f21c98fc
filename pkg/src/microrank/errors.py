"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class MicrorankError(Exception):
    """Base class for all package errors."""


class ShapeError(MicrorankError, ValueError):
    """Array dimensions are inconsistent with the operation's contract."""


class UsageError(MicrorankError, ValueError):
    """A precondition was violated (empty input, degenerate metric, ...)."""


class DataError(MicrorankError):
    """Dataset files or contents failed validation."""


class ConfigError(MicrorankError):
    """Run configuration is malformed or self-contradictory."""


class NumericError(MicrorankError, ArithmeticError):
    """A computation produced non-finite values."""
