"""Finite-horizon linear-quadratic mean field games.

Direct approach (re-scaled Riccati limit of the N-player game), fixed-point
approach (linear two-point boundary value problem), their consistency, and
long-time analysis through the non-symmetric algebraic Riccati equation.
"""

from .model import GameModel, ModelError, control_weight, scalar_hat_params, validate

__version__ = "0.1.0"

__all__ = ["GameModel", "ModelError", "control_weight", "scalar_hat_params", "validate", "__version__"]
