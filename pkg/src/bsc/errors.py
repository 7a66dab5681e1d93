"""Exception types shared across the package."""


class DataError(ValueError):
    """Malformed or inconsistent input data or files."""


class NumericalError(ArithmeticError):
    """A numerical routine failed to produce a usable result."""
