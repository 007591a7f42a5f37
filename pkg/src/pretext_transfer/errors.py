"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input data violates an operation's preconditions."""


class ShapeError(ValidationError):
    """Array dimensions do not match what the operation expects."""


class ConfigError(ValidationError):
    """A configuration value or combination of values is not usable."""


class TrainingDiverged(ValidationError):
    """A training loop produced a non-finite loss or parameter."""
