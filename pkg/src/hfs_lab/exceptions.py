"""Exception types shared across the package."""


class HfsLabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HfsLabError, ValueError):
    """Invalid shapes, specs or hyperparameters."""


class ContractError(HfsLabError, ValueError):
    """A precondition of an operation was violated at call time."""


class NonFiniteError(HfsLabError, FloatingPointError):
    """Non-finite values appeared during a forward pass or training step."""


class GridTooLargeError(ConfigurationError):
    """Factor grid exceeds the enumeration limit."""


class DegenerateMetricError(HfsLabError, ValueError):
    """A metric is undefined for the given inputs (e.g. all-zero importances)."""
