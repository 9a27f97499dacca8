"""Exception types shared across the package."""


class ThorError(Exception):
    """Base class for package errors."""


class ContractError(ThorError, RuntimeError):
    """A caller or component broke an interface contract."""


class NumericError(ThorError, ArithmeticError):
    """Non-finite or otherwise unusable numeric values."""


class TrainingDivergence(NumericError):
    """An iterative fit produced NaN/inf or exploded."""


class ConfigError(ThorError, ValueError):
    """Malformed or unknown configuration."""


class UnsupportedError(ThorError, ValueError):
    """The operation is not defined for this kind of input."""
