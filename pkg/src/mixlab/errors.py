"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration key, value, or combination."""


class DataError(ValueError):
    """Dataset contents violate a required property."""


class ParseError(ValueError):
    """Malformed input file or inline spec."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
