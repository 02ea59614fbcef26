"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shape or resolution mismatch between tensors or against a config."""


class NumericError(ArithmeticError):
    """Non-finite value produced where finite arithmetic is required."""


class DomainError(ValueError):
    """Input value outside the documented domain of an operation."""


class FormatError(ValueError):
    """Malformed weights file or checkpoint."""


class ConfigError(ValueError):
    """Bad run-configuration key, value, or combination."""
