"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed arguments: shape mismatch, out-of-range index, bad kind."""


class SingularityError(ArithmeticError):
    """A field was queried at a point where it is undefined (t=0 or sigma=0 on a point mass)."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss."""


class ConfigError(ValueError):
    """Inconsistent guidance or experiment configuration."""
