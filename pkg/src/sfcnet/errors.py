"""Exception types shared across the package."""


class InputError(ValueError):
    """Bad runtime input: malformed file, out-of-range value, too few points."""


class DimensionError(InputError):
    """Shapes of operands do not line up. Message names both shapes."""


class ConfigError(ValueError):
    """Invalid network configuration. Message lists every violation."""


class ContractError(RuntimeError):
    """API misuse: e.g. backward on a non-scalar, optimizer step without grads."""
