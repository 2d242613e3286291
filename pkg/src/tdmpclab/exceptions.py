"""Error taxonomy shared across the package."""


class ConfigurationError(ValueError):
    """Bad static configuration: shapes, widths, unknown keys, invalid names."""


class ContractError(RuntimeError):
    """A caller broke an API precondition (e.g. backward on a non-scalar)."""


class NumericsError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class DomainError(ValueError):
    """Runtime input outside the mathematical domain (e.g. std <= 0)."""


class ParseError(ValueError):
    """Malformed config or checkpoint content."""
