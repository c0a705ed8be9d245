"""Limiting (infinite-population) Riccati system.

Backward solves for the symmetric Riccati ``lambda1``, the non-symmetric
Riccati ``lambda2`` (which may escape in finite time), the linear ``lambda3``,
the offsets ``chi1``/``chi2`` and a forward solve of the closed-loop mean field.
Scalar closed forms for ``lambda2`` are provided for the case
``Qf = A + sqrt(A^2 + Q)``, ``M = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .integrate import (
    DEFAULT_POLICY,
    FiniteEscapeError,
    GridPolicy,
    IntegrationError,
    MatrixPath,
    OdeResult,
    TimeGrid,
    integrate_backward,
    integrate_forward,
)
from .model import GameModel, ModelError, ScalarHatParams, control_weight

__all__ = [
    "LimitSolution",
    "SolvabilityVerdict",
    "ESCAPED",
    "solve_lambda1",
    "solve_lambda2",
    "lambda2_ode",
    "solve_lambda3",
    "solve_chi1",
    "solve_chi2",
    "solve_mean_field",
    "solve_limit",
    "check_asymptotic_solvability",
    "lambda2_scalar_closed_form",
    "escape_distance_scalar",
    "escape_time_scalar",
]

ESCAPED = "escaped"
_CASE_BAND = 1e-12


def _sym(X):
    return 0.5 * (X + X.T)


@dataclass
class LimitSolution:
    lambda1: MatrixPath
    lambda2: MatrixPath
    lambda3: MatrixPath
    chi1: MatrixPath
    chi2: MatrixPath
    xbar: MatrixPath
    x0: np.ndarray


@dataclass
class SolvabilityVerdict:
    solvable: bool
    escape_time_estimate: Optional[float]
    max_norm_reached: float
    grid_used: TimeGrid
    escape_bracket: Optional[tuple] = None

    def to_dict(self) -> dict:
        return {
            "solvable": self.solvable,
            "escape_time_estimate": self.escape_time_estimate,
            "escape_bracket": None if self.escape_bracket is None else list(self.escape_bracket),
            "max_norm_reached": self.max_norm_reached,
            "grid_nodes": len(self.grid_used),
        }


def _no_escape(res: OdeResult, what: str) -> MatrixPath:
    # linear or globally existing equations: an escape means misconfiguration
    if res.escaped:
        raise IntegrationError(
            f"{what} exceeded the escape threshold near t = {res.escape.estimate:.6g}; "
            "this equation has a global solution, check tolerances and data scale")
    return res.path


def solve_lambda1(model: GameModel, policy: GridPolicy = DEFAULT_POLICY) -> MatrixPath:
    """Symmetric Riccati ``L' = L M L - (L A + A^T L) - Q``, ``L(T) = Qf``."""
    M = control_weight(model).M
    A, Q = model.A, model.Q

    def rhs(t, L):
        return L @ M @ L - (L @ A + A.T @ L) - Q

    res = integrate_backward(rhs, model.Qf, model.T, 0.0, policy, project=_sym)
    return _no_escape(res, "lambda1")


def lambda2_ode(model: GameModel, lambda1: MatrixPath,
                policy: GridPolicy = DEFAULT_POLICY) -> OdeResult:
    """Raw backward integration of the non-symmetric Riccati equation.

    Returns the integrator result, which carries an escape report instead of
    raising.
    """
    M = control_weight(model).M
    A, G = model.A, model.G
    AG = A + G
    QGam = model.Q @ model.Gamma

    def rhs(t, L2):
        L1 = lambda1(t)
        L2M = L2 @ M
        return (L1 @ M @ L2 + L2M @ L1 + L2M @ L2
                - (L1 @ G + L2 @ AG + A.T @ L2) + QGam)

    return integrate_backward(rhs, -model.Qf @ model.Gammaf, model.T, 0.0, policy)


def solve_lambda2(model: GameModel, lambda1: MatrixPath,
                  policy: GridPolicy = DEFAULT_POLICY) -> MatrixPath:
    """Non-symmetric Riccati solve; raises :class:`FiniteEscapeError` on blow-up."""
    res = lambda2_ode(model, lambda1, policy)
    if res.escaped:
        raise FiniteEscapeError(res.escape, "lambda2")
    return res.path


def solve_lambda3(model: GameModel, lambda1: MatrixPath, lambda2: MatrixPath,
                  policy: GridPolicy = DEFAULT_POLICY) -> MatrixPath:
    M = control_weight(model).M
    A, G = model.A, model.G
    AG = A + G
    Gm = model.Gamma
    GQG = Gm.T @ model.Q @ Gm

    def rhs(t, L3):
        L1, L2 = lambda1(t), lambda2(t)
        L2t = L2.T
        return (L2t @ M @ L2 + L3 @ M @ L1 + L1 @ M @ L3 + L3 @ M @ L2 + L2t @ M @ L3
                - (L2t @ G + G.T @ L2 + L3 @ AG + AG.T @ L3) - GQG)

    term = model.Gammaf.T @ model.Qf @ model.Gammaf
    res = integrate_backward(rhs, term, model.T, 0.0, policy, project=_sym)
    return _no_escape(res, "lambda3")


def solve_chi1(model: GameModel, lambda1: MatrixPath, lambda2: MatrixPath,
               policy: GridPolicy = DEFAULT_POLICY) -> MatrixPath:
    M = control_weight(model).M
    At = model.A.T
    Qeta = (model.Q @ model.eta)[:, None]

    def rhs(t, c):
        return ((lambda1(t) + lambda2(t)) @ M - At) @ c + Qeta

    term = -(model.Qf @ model.etaf)[:, None]
    return _no_escape(integrate_backward(rhs, term, model.T, 0.0, policy), "chi1")


def solve_chi2(model: GameModel, lambda1: MatrixPath, lambda2: MatrixPath,
               lambda3: MatrixPath, chi1: MatrixPath,
               policy: GridPolicy = DEFAULT_POLICY) -> MatrixPath:
    M = control_weight(model).M
    A, G = model.A, model.G
    AGt = (A + G).T
    GQeta = (model.Gamma.T @ model.Q @ model.eta)[:, None]

    def rhs(t, c2):
        L1, L2, L3 = lambda1(t), lambda2(t), lambda3(t)
        L2t = L2.T
        return (((L2t + L3) @ M - G.T) @ chi1(t)
                + ((L1 + L2t) @ M - AGt) @ c2 - GQeta)

    term = (model.Gammaf.T @ model.Qf @ model.etaf)[:, None]
    return _no_escape(integrate_backward(rhs, term, model.T, 0.0, policy), "chi2")


def solve_mean_field(model: GameModel, lambda1: MatrixPath, lambda2: MatrixPath,
                     chi1: MatrixPath, x0, policy: GridPolicy = DEFAULT_POLICY) -> MatrixPath:
    """Closed-loop mean field ``x' = (A - M(L1 + L2) + G) x - M chi1``, ``x(0) = x0``."""
    M = control_weight(model).M
    AG = model.A + model.G
    x0 = np.asarray(x0, dtype=float).reshape(model.n, 1)

    def rhs(t, x):
        return (AG - M @ (lambda1(t) + lambda2(t))) @ x - M @ chi1(t)

    path = _no_escape(integrate_forward(rhs, x0, 0.0, model.T, policy), "mean field")
    path.values[0] = x0
    return path


def solve_limit(model: GameModel, x0=None,
                policy: GridPolicy = DEFAULT_POLICY) -> LimitSolution:
    """Solve the whole limiting system; raises :class:`FiniteEscapeError` if ``lambda2`` escapes."""
    x0 = np.zeros(model.n) if x0 is None else np.asarray(x0, dtype=float).reshape(model.n)
    l1 = solve_lambda1(model, policy)
    l2 = solve_lambda2(model, l1, policy)
    l3 = solve_lambda3(model, l1, l2, policy)
    c1 = solve_chi1(model, l1, l2, policy)
    c2 = solve_chi2(model, l1, l2, l3, c1, policy)
    xb = solve_mean_field(model, l1, l2, c1, x0, policy)
    return LimitSolution(l1, l2, l3, c1, c2, xb, x0)


def check_asymptotic_solvability(model: GameModel,
                                 policy: GridPolicy = DEFAULT_POLICY) -> SolvabilityVerdict:
    """Solvable iff the non-symmetric Riccati equation reaches ``t = 0``."""
    l1 = solve_lambda1(model, policy)
    res = lambda2_ode(model, l1, policy)
    if res.escaped:
        e = res.escape
        return SolvabilityVerdict(False, e.estimate, e.max_norm, res.path.grid, (e.t_lo, e.t_hi))
    return SolvabilityVerdict(True, None, res.max_norm, res.path.grid)


# ---------------------------------------------------------------- scalar closed forms

def _regime(p: ScalarHatParams) -> str:
    if abs(p.Delta_hat) <= _CASE_BAND:
        return "critical"
    return "hyperbolic" if p.Delta_hat > 0 else "oscillatory"


def escape_distance_scalar(p: ScalarHatParams) -> Optional[float]:
    """Backward distance ``T - t`` at which the scalar ``lambda2`` blows up.

    ``None`` means the solution exists for every horizon.
    """
    if p.Q_hat == 0:
        return None
    regime = _regime(p)
    if regime == "hyperbolic":
        lh1, lh2 = p.lambda_hat_1, p.lambda_hat_2
        if lh1 == 0 or lh2 / lh1 <= 1:
            return None
        return math.log(lh2 / lh1) / (2 * p.alpha)
    if regime == "critical":
        return -1.0 / p.a_hat if p.a_hat < 0 else None
    return (math.pi - p.theta) / p.beta


def escape_time_scalar(p: ScalarHatParams, T: float) -> Optional[float]:
    """Escape time in ``[0, T)`` for horizon ``T``, or ``None`` for no escape."""
    s = escape_distance_scalar(p)
    if s is None or not (0 < s <= T):
        return None
    return T - s


def lambda2_scalar_closed_form(p: ScalarHatParams, T: float, t: float):
    """Closed-form scalar ``lambda2(t)`` with ``lambda2(T) = 0``.

    Returns :data:`ESCAPED` when ``t`` lies at or before the escape time.
    """
    s = T - t
    if s < 0:
        raise ValueError("t must not exceed T")
    if s == 0:
        return 0.0
    s_star = escape_distance_scalar(p)
    if s_star is not None and s >= s_star:
        return ESCAPED
    regime = _regime(p)
    if regime == "hyperbolic":
        a = p.alpha
        e = math.exp(-2 * a * s)
        return p.Q_hat * (1 - e) / (p.lambda_hat_2 * e - p.lambda_hat_1)
    if regime == "critical":
        a = p.a_hat
        return a * a * s / (-a * s - 1)
    if regime == "oscillatory":
        b = p.beta
        return -math.sqrt(p.Q_hat) * math.sin(b * s) / math.sin(b * s + p.theta)
    raise ModelError("scalar parameters outside every closed-form regime")
