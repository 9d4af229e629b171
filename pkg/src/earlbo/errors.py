"""Exception hierarchy shared across the package."""


class EarlBoError(Exception):
    """Base class for all package errors."""


class ShapeError(EarlBoError, ValueError):
    pass


class NumericError(EarlBoError, ArithmeticError):
    pass


class FactorizationError(NumericError):
    """Cholesky factorization failed even after jitter escalation."""


class ConfigError(EarlBoError, ValueError):
    pass


class EpisodeError(EarlBoError, RuntimeError):
    pass


class MemoryBufferError(EarlBoError, RuntimeError):
    """Memory buffer is in a state that cannot be consumed."""


class IngestionError(EarlBoError, ValueError):
    pass
