"""Exception types raised across the package."""


class CaccError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(CaccError, ValueError):
    pass


class InvalidSpec(CaccError, ValueError):
    pass


class InvalidAction(CaccError, ValueError):
    pass


class InvalidDistribution(CaccError, ValueError):
    pass


class InvalidSize(CaccError, ValueError):
    pass


class EmptyBatch(CaccError, ValueError):
    pass


class ModeRequiresNeighbors(CaccError, ValueError):
    pass


class NonFinite(CaccError, FloatingPointError):
    """Raised when parameters or intermediate values stop being finite."""


class Malformed(CaccError, ValueError):
    """Raised when a byte stream cannot be decoded."""


class EncodeOverflow(CaccError, OverflowError):
    pass


class ConfigError(CaccError, ValueError):
    pass
