"""Drift-diffusion-Poisson solver for semiconductor-electrolyte half cells.

The package couples a mixed finite-element Poisson solve with local
discontinuous Galerkin transport of four charged species (electrons and
holes in the semiconductor, reductants and oxidants in the electrolyte)
joined by nonlinear reactive-interface fluxes, and provides four
implicit-explicit time-marching schemes plus device-level experiments
(steady states, I-V sweeps, fill factors, Schottky comparison).
"""

from pecsolve.errors import (
    BracketingError,
    ConfigError,
    DivergenceError,
    InvalidDomainError,
    NonConvergedError,
    PecsolveError,
    SingularSystemError,
)

__all__ = [
    "BracketingError",
    "ConfigError",
    "DivergenceError",
    "InvalidDomainError",
    "NonConvergedError",
    "PecsolveError",
    "SingularSystemError",
]

__version__ = "0.1.0"
