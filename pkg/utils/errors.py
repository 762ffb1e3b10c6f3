"""
Exception hierarchy shared by the library and the command line.

Anything deriving from ValidationError is a caller mistake (exit code 2);
I/O problems are left as the builtin OSError (exit code 1).
"""


class ActiveFTError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(ActiveFTError, ValueError):
    """Inputs or arguments violate a documented precondition."""


class PoolFormatError(ValidationError):
    """A pool file is malformed or its rows break the pool invariants."""


class DimensionMismatchError(ValidationError):
    pass


class BudgetError(ValidationError):
    """Budget outside [1, n]."""


class DegenerateBudgetError(ValidationError):
    """B = 1 with a regularizer that needs at least two parameters."""


class OracleTooLargeError(ValidationError):
    pass


class InvalidSelectionError(ValidationError):
    """Selection indices are duplicated or out of range."""
