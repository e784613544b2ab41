"""Exception hierarchy shared by all modules."""


class GedgError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(GedgError, ValueError):
    """Invalid configuration (bad cutoff, grid size, keys, ...)."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [message])


class DomainError(GedgError, ValueError):
    """Non-finite or otherwise inadmissible numeric input."""


class DataError(GedgError, ValueError):
    """Input data that cannot be projected or integrated."""


class LogicError(GedgError, RuntimeError):
    """Caller contract violation (grid mismatch, zero-rate event request)."""


class StiffnessError(GedgError, RuntimeError):
    """Too many consecutive step rejections."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class ConservationError(GedgError, RuntimeError):
    """Number or mass drift beyond the configured tolerance."""


class AbsorbingState(GedgError):
    """The particle system has no admissible event left."""
