"""Exception types shared across the package."""


class PrismFlowError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(PrismFlowError):
    """An array argument has the wrong shape or incompatible dimensions."""


class NumericError(PrismFlowError):
    """A computation produced non-finite values or failed to converge."""


class ContractViolation(PrismFlowError):
    """A caller broke a documented precondition."""


class ConfigError(PrismFlowError):
    """A configuration value is invalid or unknown."""


class ParseError(PrismFlowError):
    """An input file is malformed; message carries line/column context."""
