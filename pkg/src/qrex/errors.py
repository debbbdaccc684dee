class QRexError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(QRexError, ValueError):
    """Invalid parameters, shapes or experiment configuration."""


class OracleError(QRexError, RuntimeError):
    """An exact computation could not be completed (no convergence, singular system...)."""
