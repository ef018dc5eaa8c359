"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class DegenerateInputError(ValueError):
    """Input is numerically degenerate (e.g. zero-norm vector fed to cosine)."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown config key."""


class DataFormatError(ValueError):
    """Corrupt or unreadable on-disk artifact (bad magic, truncation, checksum)."""


class NumericalError(ArithmeticError):
    """Non-finite value encountered where a finite one is required."""
