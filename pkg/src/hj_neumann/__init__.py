"""Solvers for first-order Hamilton-Jacobi equations on bounded domains with
nonlinear Neumann and dynamical boundary conditions."""

from . import geometry, models, pde, ergodic, skorokhod, variational, weak_kam

__version__ = "0.1.0"

__all__ = [
    "geometry", "models", "pde", "ergodic", "skorokhod", "variational",
    "weak_kam", "__version__",
]
