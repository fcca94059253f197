"""Weak-noise theory of the KPZ lower tail: limit shape, finite-lambda
Hamilton system, Feynman-Kac Monte Carlo, and convergence experiments."""
from .errors import (
    ContractError,
    DivergenceError,
    DomainError,
    InfeasibleLatticeError,
    InfeasibleMultiplierError,
    NonConvergenceError,
    OutOfRangeError,
    SolverError,
    SolverFailure,
    StepSizeError,
    ValidationError,
    WNTError,
)
from .fields import Field, Potential, sample_devlim
from .geodesics import Geodesic, action, dp_oracle, geodesic_to, hlim_at, hlim_surface
from .limit_shape import LensProfile, build_lens_profile, devlim, devlim_at

__version__ = "0.1.0"

__all__ = [
    "ContractError", "DivergenceError", "DomainError", "InfeasibleLatticeError",
    "InfeasibleMultiplierError", "NonConvergenceError", "OutOfRangeError", "SolverError",
    "SolverFailure", "StepSizeError", "ValidationError", "WNTError",
    "Field", "Potential", "sample_devlim",
    "Geodesic", "action", "dp_oracle", "geodesic_to", "hlim_at", "hlim_surface",
    "LensProfile", "build_lens_profile", "devlim", "devlim_at",
]
