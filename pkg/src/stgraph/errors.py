"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition or shape contract."""


class DataError(RuntimeError):
    """A file or dataset is missing, malformed, or inconsistent."""


class ConfigError(ValueError):
    """A run configuration is missing keys, has unknown keys, or is out of range."""


class NumericError(ArithmeticError):
    """A numerical routine produced non-finite values or failed to converge."""
