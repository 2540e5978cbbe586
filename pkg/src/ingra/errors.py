"""Exception types shared across the package."""


class IngraError(Exception):
    """Base class for all package errors."""


class ConfigError(IngraError, ValueError):
    """Invalid configuration, shape or hyperparameter."""


class DataError(IngraError, ValueError):
    """Malformed or insufficient input data."""


class StateError(IngraError, RuntimeError):
    """Operation invoked in the wrong order (e.g. backward before forward)."""


class NumericError(IngraError, ArithmeticError):
    """Non-finite values or ill-conditioned linear algebra."""


class GenerationError(IngraError, RuntimeError):
    """Synthetic data generation could not produce a stable series."""


class ContractError(IngraError, ValueError):
    """An input violates an operation's precondition."""
