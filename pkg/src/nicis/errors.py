"""Exception types shared across the package."""


class NicisError(Exception):
    """Base class for all package errors."""


class InsufficientPrecision(NicisError):
    """The requested result is not determined by the available digits of alpha."""


class HorizonExceeded(NicisError):
    """A bounded search hit its iteration cap before finding an answer."""


class IntegratorTolerance(NicisError):
    """A flow map could not be built within the required area-preservation tolerance."""


class ConfigError(NicisError):
    """Invalid experiment configuration or CLI arguments."""
