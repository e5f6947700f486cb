"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class NumericError(ArithmeticError):
    """A computation failed to converge or produced non-finite values."""


class ContractError(ValueError):
    """Caller violated a shape or range contract."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""
