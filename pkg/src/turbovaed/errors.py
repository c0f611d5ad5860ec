"""Exception types shared across the engine."""


class ShapeError(ValueError):
    """Operand extents are inconsistent with an operation's contract."""


class ConfigError(ValueError):
    """A configuration value is invalid (kernel parity, group counts, names)."""


class DomainError(ValueError):
    """Input lies outside an operation's mathematical domain."""


class NonFiniteError(FloatingPointError):
    """Debug sentinel: an operation produced NaN or Inf from finite inputs."""
