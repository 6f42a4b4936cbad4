"""Exception types shared by every sfgof module."""


class SfgofError(Exception):
    """Base class for all errors raised by this package."""


class NumericalError(SfgofError):
    """A computation produced a non-finite value or blew up."""


class ModelError(SfgofError):
    """A model violates a structural requirement (identifiability, ergodicity, ...)."""


class ConfigError(SfgofError):
    """An argument or configuration value is outside its contract."""


class DomainError(SfgofError):
    """A probability-level argument lies outside (0, 1)."""
