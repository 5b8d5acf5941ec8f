"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid sizes, settings or config values."""


class ShapeError(ValueError):
    """Array shapes that do not fit an operation."""


class NumericError(ArithmeticError):
    """Non-finite values or a numerical routine that failed to converge."""


class DataError(ValueError):
    """Malformed files or datasets that cannot satisfy a request."""
