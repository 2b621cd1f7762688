"""Exception types shared across the package."""


class UsageError(ValueError):
    """Caller violated a precondition (bad argument, malformed file, ...)."""


class NumericRangeError(ArithmeticError):
    """A computation left the representable float64 range (overflow to inf/nan)."""
