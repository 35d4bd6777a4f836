"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid shapes, hyperparameters or layer wiring."""


class PreconditionError(ValueError):
    """An operation was called on inputs that violate its preconditions."""


class NumericalError(ArithmeticError):
    """Non-finite values appeared during a computation."""


class CheckpointError(IOError):
    """A checkpoint file is malformed or does not match the model."""
