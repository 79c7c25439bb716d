"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class InputError(ValueError):
    """Caller supplied data that violates an operation's preconditions."""


class ShapeError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class StateError(RuntimeError):
    """Operation called in an invalid order (e.g. backward before forward)."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but degenerate (e.g. fully masked row)."""


class DataFormatError(ValueError):
    """On-disk or on-wire data does not match the expected format."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""
