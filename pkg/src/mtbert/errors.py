"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """A caller broke an operation's precondition."""


class DataError(ValueError):
    """Input data is malformed or out of range."""


class ConfigError(ValueError):
    """A configuration value is invalid."""
