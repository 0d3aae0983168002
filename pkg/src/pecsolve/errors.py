"""Exception hierarchy shared across the solver."""


class PecsolveError(Exception):
    """Base class for all solver errors."""


class InvalidDomainError(PecsolveError):
    """Mesh or domain geometry request is inconsistent."""


class ConfigError(PecsolveError):
    """Bad configuration file, key, or combination of options."""


class SingularSystemError(PecsolveError):
    """Direct factorization hit a (numerically) singular matrix."""


class DivergenceError(PecsolveError):
    """Time marching blew up (non-finite or runaway field norms)."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class NonConvergedError(PecsolveError):
    """A run hit its step budget before reaching steady state."""


class BracketingError(PecsolveError):
    """A root/extremum search was asked for on data with no bracket."""
