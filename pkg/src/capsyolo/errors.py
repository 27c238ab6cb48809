"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes of the operands do not line up."""


class ConfigError(ValueError):
    """A configuration value is out of its legal range."""


class ValidationError(ValueError):
    """A dataset or manifest failed a consistency check."""
