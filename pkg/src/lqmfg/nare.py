"""Long-time behavior: algebraic Riccati equations.

The symmetric ARE for the stationary own-state gain is solved through the
stable invariant subspace of the Hamiltonian matrix. The non-symmetric ARE
for the stationary cross gain has a stabilizing solution exactly when the
``2n x 2n`` matrix built from the stationary gain has an (n, n) splitting of
its spectrum across the imaginary axis and the stable subspace is a graph;
that solution is ``U2 U1^{-1}`` for a basis ``[U1; U2]`` of the subspace.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import expm, schur

from .integrate import DEFAULT_POLICY, GridPolicy, integrate
from .model import GameModel, ModelError, control_weight
from .riccati import solve_lambda1

__all__ = [
    "AREResult",
    "SpectralSplit",
    "NareResult",
    "StabilityProbe",
    "solve_are",
    "build_A_infinity",
    "spectral_split",
    "stabilizing_solution",
    "nare_residual",
    "limiting_offset",
    "local_stability_probe",
    "linearized_flow_gap",
    "TOL_SPLIT",
    "TOL_HURWITZ",
]

TOL_SPLIT = 1e-9
TOL_HURWITZ = 1e-9
_GRAPH_TOL = 1e-9


def _abscissa(X) -> float:
    return float(np.max(np.linalg.eigvals(X).real))


@dataclass
class AREResult:
    lambda1_inf: np.ndarray
    residual: float
    closed_loop: np.ndarray
    abscissa: float
    integration_gap: Optional[float] = None

    @property
    def flagged(self) -> bool:
        """Subspace and integration routes disagree by more than 1e-6."""
        return self.integration_gap is not None and self.integration_gap > 1e-6


def _are_residual(L, A, M, Q):
    return float(np.linalg.norm(L @ M @ L - (L @ A + A.T @ L) - Q))


def solve_are(model: GameModel, crosscheck: bool = False, horizon: float = None,
              policy: GridPolicy = DEFAULT_POLICY) -> AREResult:
    """Stabilizing PSD solution of ``L M L - (L A + A^T L) - Q = 0``.

    With ``crosscheck`` the answer is compared against the symmetric Riccati
    ODE integrated backward from zero over ``horizon`` (default: 40 time
    constants of the closed loop).
    """
    n = model.n
    M = control_weight(model).M
    A, Q = model.A, model.Q
    H = np.block([[A, -M], [-Q, -A.T]])
    T, Z, sdim = schur(H, output="real", sort="lhp")
    if sdim != n:
        raise ModelError(f"Hamiltonian has {sdim} stable eigenvalues, expected {n}; (A, B) is likely not stabilizable")
    U1, U2 = Z[:n, :n], Z[n:, :n]
    sv = np.linalg.svd(U1, compute_uv=False)
    if sv.min() <= _GRAPH_TOL * sv.max():
        raise ModelError("stable subspace is not a graph; (A, B) is likely not stabilizable")
    L = np.linalg.solve(U1.T, U2.T).T
    L = 0.5 * (L + L.T)
    cl = A - M @ L
    res = AREResult(L, _are_residual(L, A, M, Q), cl, _abscissa(cl))
    if crosscheck:
        if horizon is None:
            horizon = 40.0 / max(-res.abscissa, 1e-3)
        long = model.replace(T=horizon, Qf=np.zeros((n, n)))
        L_ode = solve_lambda1(long, policy)(0.0)
        res.integration_gap = float(np.linalg.norm(L_ode - L))
    return res


def build_A_infinity(model: GameModel, are: AREResult) -> np.ndarray:
    M = control_weight(model).M
    A, G, L = model.A, model.G, are.lambda1_inf
    return np.block([[A - M @ L + G, -M],
                     [model.Q @ model.Gamma - L @ G, -A.T + L @ M]])


@dataclass
class SpectralSplit:
    A_inf: np.ndarray
    eigenvalues: np.ndarray
    n_stable: int
    n_unstable: int
    near_axis: int
    U: np.ndarray
    sigma_min_U1: Optional[float]
    sigma_max_U1: Optional[float]
    invariance_residual: float

    @property
    def n(self) -> int:
        return self.A_inf.shape[0] // 2

    @property
    def strong_split(self) -> bool:
        return self.near_axis == 0 and self.n_stable == self.n and self.n_unstable == self.n


def spectral_split(A_inf, tol_split: float = TOL_SPLIT) -> SpectralSplit:
    """Half-plane eigenvalue counts and a real basis of the stable invariant subspace."""
    A_inf = np.asarray(A_inf, dtype=float)
    n2 = A_inf.shape[0]
    n = n2 // 2
    ev = np.linalg.eigvals(A_inf)
    near = int(np.sum(np.abs(ev.real) <= tol_split))
    n_s = int(np.sum(ev.real < -tol_split))
    n_u = int(np.sum(ev.real > tol_split))
    _, Z, sdim = schur(A_inf, output="real", sort=lambda re, im: re < -tol_split)
    U = Z[:, :sdim]
    smin = smax = None
    if sdim == n:
        sv = np.linalg.svd(U[:n], compute_uv=False)
        smin, smax = float(sv.min()), float(sv.max())
    if sdim:
        inv = float(np.linalg.norm(A_inf @ U - U @ (np.linalg.pinv(U) @ A_inf @ U)))
    else:
        inv = 0.0
    order = np.lexsort((ev.imag, ev.real))
    return SpectralSplit(A_inf, ev[order], n_s, n_u, near, U, smin, smax, inv)


@dataclass
class NareResult:
    verdict: str             # stabilizing_solution | no_splitting | not_graph | not_hurwitz
    lambda2_inf: Optional[np.ndarray] = None
    A_G: Optional[np.ndarray] = None
    A_M: Optional[np.ndarray] = None
    abscissa_AG: Optional[float] = None
    abscissa_AM: Optional[float] = None
    residual: Optional[float] = None
    split: Optional[SpectralSplit] = field(default=None, repr=False)
    lambda1_inf: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def hurwitz_AG(self) -> bool:
        return self.abscissa_AG is not None and self.abscissa_AG < -TOL_HURWITZ

    @property
    def hurwitz_AM(self) -> bool:
        return self.abscissa_AM is not None and self.abscissa_AM < -TOL_HURWITZ

    def to_dict(self) -> dict:
        ev = self.split.eigenvalues if self.split is not None else []
        return {
            "verdict": self.verdict,
            "lambda2_inf": None if self.lambda2_inf is None else self.lambda2_inf.tolist(),
            "eigenvalues": [[float(z.real), float(z.imag)] for z in ev],
            "n_stable": None if self.split is None else self.split.n_stable,
            "n_unstable": None if self.split is None else self.split.n_unstable,
            "abscissa_AG": self.abscissa_AG,
            "abscissa_AM": self.abscissa_AM,
            "hurwitz_AG": self.hurwitz_AG,
            "hurwitz_AM": self.hurwitz_AM,
            "residual": self.residual,
        }


def nare_residual(model: GameModel, lambda1_inf, lambda2_inf) -> float:
    """Frobenius norm of the stationary cross-gain equation."""
    M = control_weight(model).M
    A, G = model.A, model.G
    L1, L2 = lambda1_inf, lambda2_inf
    R = (L1 @ M @ L2 + L2 @ M @ L1 + L2 @ M @ L2
         - (L1 @ G + L2 @ (A + G) + A.T @ L2) + model.Q @ model.Gamma)
    return float(np.linalg.norm(R))


def stabilizing_solution(model: GameModel, are: AREResult = None,
                         split: SpectralSplit = None, basis=None) -> NareResult:
    """Stabilizing solution of the non-symmetric ARE, or the reason there is none.

    ``basis`` overrides the stable-subspace basis (any ``2n x n`` matrix with
    the same column span gives the same answer).
    """
    are = are or solve_are(model)
    split = split or spectral_split(build_A_infinity(model, are))
    n = model.n
    if not split.strong_split:
        return NareResult("no_splitting", split=split, lambda1_inf=are.lambda1_inf)
    U = split.U if basis is None else np.asarray(basis, dtype=float)
    U1, U2 = U[:n], U[n:]
    sv = np.linalg.svd(U1, compute_uv=False)
    if sv.min() <= _GRAPH_TOL * sv.max():
        return NareResult("not_graph", split=split, lambda1_inf=are.lambda1_inf)
    L2 = np.linalg.solve(U1.T, U2.T).T
    M = control_weight(model).M
    L1 = are.lambda1_inf
    AG = model.A - M @ (L1 + L2) + model.G
    AM = model.A - M @ (L1 + L2.T)
    out = NareResult("stabilizing_solution", L2, AG, AM, _abscissa(AG), _abscissa(AM),
                     nare_residual(model, L1, L2), split, L1)
    if not (out.hurwitz_AG and out.hurwitz_AM):
        out.verdict = "not_hurwitz"
    return out


def limiting_offset(model: GameModel, nare: NareResult) -> np.ndarray:
    """Stationary offset solving ``A_M^T chi = Q eta``."""
    if nare.verdict != "stabilizing_solution" or not nare.hurwitz_AM:
        raise ModelError("limiting offset needs a stabilizing solution with Hurwitz A_M")
    return np.linalg.solve(nare.A_M.T, model.Q @ model.eta)


@dataclass
class StabilityProbe:
    delta: float
    t: np.ndarray
    distance: np.ndarray
    predicted_rate: float           # abscissa(A_G) + abscissa(A_M)
    diverged: bool

    @property
    def decayed(self) -> bool:
        return (not self.diverged) and self.distance[-1] < self.distance[0]


def local_stability_probe(model: GameModel, nare: NareResult, delta: float,
                          horizon: float = 10.0, seed: int = 0,
                          direction=None, policy: GridPolicy = DEFAULT_POLICY) -> StabilityProbe:
    """Integrate the time-reversed cross-gain equation from a perturbed equilibrium.

    The start is ``lambda2_inf + delta E`` with ``E`` a random unit-Frobenius
    matrix (or ``direction``). Reports the distance to the equilibrium over
    time; divergence is recorded, not raised.
    """
    if nare.verdict != "stabilizing_solution":
        raise ModelError("stability probe needs a stabilizing solution")
    M = control_weight(model).M
    A, G = model.A, model.G
    L1, L2 = nare.lambda1_inf, nare.lambda2_inf
    QGam = model.Q @ model.Gamma
    if direction is None:
        E = np.random.default_rng(seed).normal(size=L2.shape)
    else:
        E = np.asarray(direction, dtype=float)
    E = E / np.linalg.norm(E)

    def rhs(t, Y):
        return (-L1 @ M @ Y - Y @ M @ L1 - Y @ M @ Y
                + (L1 @ G + Y @ (A + G) + A.T @ Y) - QGam)

    res = integrate(rhs, L2 + delta * E, 0.0, horizon, policy)
    dist = np.sqrt(np.sum((res.path.values - L2) ** 2, axis=(1, 2)))
    return StabilityProbe(delta, res.path.t, dist, nare.abscissa_AG + nare.abscissa_AM, res.escaped)


def linearized_flow_gap(nare: NareResult, Z0, t: float,
                        policy: GridPolicy = DEFAULT_POLICY) -> float:
    """Compare ``Z' = A_M^T Z + Z A_G`` integrated to ``t`` with its matrix-exponential solution."""
    AMt, AG = nare.A_M.T, nare.A_G
    Z0 = np.asarray(Z0, dtype=float)
    res = integrate(lambda s, Z: AMt @ Z + Z @ AG, Z0, 0.0, t, replace(policy, rtol=1e-12, atol=1e-14))
    exact = expm(AMt * t) @ Z0 @ expm(AG * t)
    return float(np.linalg.norm(res.path.values[-1] - exact))
