"""Exception types shared across the package."""


class ShapleyVICError(Exception):
    """Base class for all package errors."""


class ValidationError(ShapleyVICError, ValueError):
    """Bad input: malformed data, inconsistent shapes, invalid configuration."""


class NumericalError(ShapleyVICError, ArithmeticError):
    """A computation produced non-finite values (e.g. training diverged)."""
