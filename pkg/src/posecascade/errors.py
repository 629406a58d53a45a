"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Raised when an array argument has the wrong shape or non-finite entries."""


class NumericalError(RuntimeError):
    """Raised when a linear solve fails even after regularization escalation."""


class FormatError(ValueError):
    """Raised when a file being read does not conform to its declared format."""


class DivergenceError(RuntimeError):
    """Raised when fine-tuning produces a non-finite loss or parameter."""


class ConfigError(ValueError):
    """Raised for invalid configuration values or malformed config files."""
