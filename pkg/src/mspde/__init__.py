"""Spectral Galerkin solver and Malliavin sensitivities for 1-d SPDEs with dissipative drift."""

__version__ = "0.1.0"

from .errors import ConfigError, DomainError, MspdeError, NumericalError, UsageError
from .spectral import SpectralField, SpectralGrid
from .noise import CovarianceModel, HVector, build_diagonal, build_positivity_preserving
from .coefficients import builtin_drift, builtin_sigma, cutoff_drift, yosida_drift
from .solver import Problem, SolverConfig, Trajectory, solve_increments, solve_path
from .malliavin import (
    TangentAtlas,
    adjoint_sensitivities,
    cameron_martin_oracle,
    directional_tangent,
    malliavin_norm,
    propagate_atlas,
)

__all__ = [
    "ConfigError", "DomainError", "MspdeError", "NumericalError", "UsageError",
    "SpectralField", "SpectralGrid",
    "CovarianceModel", "HVector", "build_diagonal", "build_positivity_preserving",
    "builtin_drift", "builtin_sigma", "cutoff_drift", "yosida_drift",
    "Problem", "SolverConfig", "Trajectory", "solve_increments", "solve_path",
    "TangentAtlas", "adjoint_sensitivities", "cameron_martin_oracle", "directional_tangent",
    "malliavin_norm", "propagate_atlas",
]
