"""Fixed-point approach: the linear two-point boundary value problem.

The mean field ``x`` and costate ``s`` solve

    x' = (A - M L1 + G) x - M s,                  x(0) = x0
    s' = (Q Gamma - L1 G) x + (-A^T + L1 M) s + Q eta,
    s(T) = -Qf Gammaf x(T) - Qf etaf

with ``L1`` the symmetric Riccati solution. The transition matrix of the
homogeneous system reduces solvability to the linear system
``Z1 s(0) + Z2 = 0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .integrate import TIGHT_POLICY, GridPolicy, MatrixPath, TimeGrid, integrate
from .model import GameModel, ModelError, ScalarHatParams, control_weight, scalar_hat_params
from .riccati import LimitSolution, solve_lambda1

__all__ = [
    "FundamentalBlocks",
    "TPBVOutcome",
    "ConsistencyReport",
    "ContractionEstimate",
    "NonUniqInstance",
    "tpbv_generator",
    "fundamental_matrix",
    "classify",
    "solve_tpbv_forward",
    "consistency_with_direct",
    "contraction_kappa0",
    "find_hat_T",
    "find_hat_T_numeric",
    "find_hat_x0",
    "find_hat_x0_numeric",
    "scalar_transition_blocks",
    "build_nonuniqueness_instance",
    "write_solution_csv",
    "RANK_INVERTIBLE",
    "RANK_DEFICIENT",
    "RANGE_TOL",
]

RANK_INVERTIBLE = 1e-7
RANK_DEFICIENT = 1e-10
RANGE_TOL = 1e-7


def _linear(policy: GridPolicy) -> GridPolicy:
    # linear systems cannot escape; growth is legitimate
    return replace(policy, norm_escape=math.inf)


def tpbv_generator(model: GameModel, lambda1: MatrixPath):
    """Return ``t -> 2n x 2n`` generator of the homogeneous boundary value system."""
    M = control_weight(model).M
    A, G = model.A, model.G
    QGam = model.Q @ model.Gamma
    n = model.n

    def gen(t):
        L1 = lambda1(t)
        out = np.empty((2 * n, 2 * n))
        out[:n, :n] = A - M @ L1 + G
        out[:n, n:] = -M
        out[n:, :n] = QGam - L1 @ G
        out[n:, n:] = -A.T + L1 @ M
        return out

    return gen


@dataclass
class FundamentalBlocks:
    """Transition matrices ``Phi(t, 0)`` (forward) and ``Phi(T, tau)`` (backward).

    ``integral`` holds ``W(tau) = int_tau^T Phi(T, s) ds``.
    """

    n: int
    T: float
    forward: MatrixPath
    to_terminal: MatrixPath
    integral: MatrixPath

    @property
    def grid(self) -> TimeGrid:
        return self.forward.grid

    def phi(self, t) -> np.ndarray:
        return self.forward(t)

    def block(self, i: int, j: int) -> MatrixPath:
        n = self.n
        return self.forward.block(slice(i * n, (i + 1) * n), slice(j * n, (j + 1) * n))

    @property
    def phi11(self):
        return self.block(0, 0)

    @property
    def phi12(self):
        return self.block(0, 1)

    @property
    def phi21(self):
        return self.block(1, 0)

    @property
    def phi22(self):
        return self.block(1, 1)

    def at_T(self) -> np.ndarray:
        return self.forward.values[-1]


def fundamental_matrix(model: GameModel, lambda1: MatrixPath,
                       policy: GridPolicy = TIGHT_POLICY) -> FundamentalBlocks:
    """Integrate ``Phi(t, 0)`` forward and ``Phi(T, tau)`` with its integral backward."""
    n2 = 2 * model.n
    gen = tpbv_generator(model, lambda1)
    pol = _linear(policy)
    fwd = integrate(lambda t, P: gen(t) @ P, np.eye(n2), 0.0, model.T, pol)

    def adj(tau, Y):
        P = Y[:, :n2]
        return np.hstack([-P @ gen(tau), -P])

    bwd = integrate(adj, np.hstack([np.eye(n2), np.zeros((n2, n2))]), model.T, 0.0, pol)
    to_T = bwd.path.block(slice(None), slice(0, n2))
    W = bwd.path.block(slice(None), slice(n2, 2 * n2))
    return FundamentalBlocks(model.n, model.T, fwd.path, to_T, W)


@dataclass
class TPBVOutcome:
    Z1: np.ndarray
    Z2: np.ndarray
    verdict: str                       # unique | infinite | none | ill-conditioned
    singular_values: np.ndarray
    scale: float                       # norm of the full terminal boundary map
    rank: int
    s0: Optional[np.ndarray] = None
    null_space: Optional[np.ndarray] = None
    range_residual: Optional[float] = None
    xbar: Optional[MatrixPath] = None
    s: Optional[MatrixPath] = None
    boundary_residual: Optional[float] = None
    x0: Optional[np.ndarray] = None

    def witnesses(self, coefficients) -> list:
        """Initial costates ``s0 + c v`` spanning the solution set (infinite case)."""
        if self.verdict != "infinite":
            raise ValueError("witnesses exist only for the infinite verdict")
        v = self.null_space[:, 0]
        return [self.s0 + c * v for c in coefficients]

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "Z1": self.Z1.tolist(),
            "Z2": self.Z2.tolist(),
            "singular_values": self.singular_values.tolist(),
            "boundary_map_scale": self.scale,
            "rank": self.rank,
            "s0": None if self.s0 is None else self.s0.tolist(),
            "null_space_dim": 0 if self.null_space is None else int(self.null_space.shape[1]),
            "range_residual": self.range_residual,
            "boundary_residual": self.boundary_residual,
        }


def _boundary_pieces(model: GameModel, blocks: FundamentalBlocks, x0):
    n = model.n
    PhiT = blocks.at_T()
    QfGf = model.Qf @ model.Gammaf
    row = np.hstack([QfGf, np.eye(n)]) @ PhiT       # terminal boundary map
    Zx, Z1 = row[:, :n], row[:, n:]
    Wfull = blocks.integral.values[0]                # int_0^T Phi(T, tau) dtau
    Wrow = np.hstack([QfGf, np.eye(n)]) @ Wfull[:, n:]
    Qeta = model.Q @ model.eta
    Qffe = model.Qf @ model.etaf
    Z2 = Zx @ x0 + Qffe + Wrow @ Qeta
    z2_scale = (np.linalg.norm(Zx, 2) * np.linalg.norm(x0) + np.linalg.norm(Qffe)
                + np.linalg.norm(Wrow, 2) * np.linalg.norm(Qeta))
    return Z1, Z2, float(np.linalg.norm(row, 2)), float(z2_scale)


def solve_tpbv_forward(model: GameModel, lambda1: MatrixPath, x0, s0,
                       policy: GridPolicy = TIGHT_POLICY):
    """Forward solve from ``(x0, s0)``. Returns ``(xbar, s, terminal residual)``."""
    n = model.n
    gen = tpbv_generator(model, lambda1)
    forcing = np.concatenate([np.zeros(n), model.Q @ model.eta])[:, None]
    y0 = np.concatenate([np.ravel(x0), np.ravel(s0)])[:, None]
    res = integrate(lambda t, y: gen(t) @ y + forcing, y0, 0.0, model.T, _linear(policy))
    p = res.path
    xbar = p.block(slice(0, n), slice(None))
    s = p.block(slice(n, 2 * n), slice(None))
    xT, sT = xbar.values[-1, :, 0], s.values[-1, :, 0]
    resid = sT + model.Qf @ model.Gammaf @ xT + model.Qf @ model.etaf
    return xbar, s, float(np.linalg.norm(resid))


def classify(model: GameModel, blocks: FundamentalBlocks, x0,
             lambda1: MatrixPath = None, policy: GridPolicy = TIGHT_POLICY) -> TPBVOutcome:
    """Decide solvability of ``Z1 s0 + Z2 = 0``.

    Singular values of ``Z1`` are compared with the norm of the whole terminal
    boundary map ``[Qf Gammaf, I] Phi(T, 0)``. Above ``RANK_INVERTIBLE`` times
    that scale the system is uniquely solvable, below ``RANK_DEFICIENT`` the
    value counts as zero, and in between the verdict is ill-conditioned. When
    ``lambda1`` is supplied the unique solution is also integrated.
    """
    n = model.n
    x0 = np.asarray(x0, dtype=float).reshape(n)
    Z1, Z2, scale, z2_scale = _boundary_pieces(model, blocks, x0)
    U, sv, Vt = np.linalg.svd(Z1)
    ref = max(scale, np.finfo(float).tiny)
    rank = int(np.sum(sv > RANK_DEFICIENT * ref))
    out = TPBVOutcome(Z1=Z1, Z2=Z2, verdict="", singular_values=sv, scale=scale,
                      rank=rank, x0=x0)
    if sv.min() > RANK_INVERTIBLE * ref:
        out.verdict = "unique"
        out.s0 = -np.linalg.solve(Z1, Z2)
    else:
        Ur = U[:, :rank]
        resid_vec = Z2 - Ur @ (Ur.T @ Z2)
        s_ls = -(Vt[:rank].T @ ((Ur.T @ Z2) / sv[:rank]))
        out.range_residual = float(np.linalg.norm(resid_vec))
        tol = RANGE_TOL * (np.linalg.norm(Z1, 2) * np.linalg.norm(s_ls) + z2_scale)
        consistent = out.range_residual <= tol
        out.s0 = s_ls
        out.null_space = Vt[rank:].T
        if sv.min() >= RANK_DEFICIENT * ref:
            # gray band: keep the unique candidate as well
            out.verdict = "ill-conditioned"
            out.s0 = -np.linalg.solve(Z1, Z2)
        else:
            out.verdict = "infinite" if consistent else "none"
    if lambda1 is not None and out.verdict == "unique":
        out.xbar, out.s, out.boundary_residual = solve_tpbv_forward(
            model, lambda1, x0, out.s0, policy)
    return out


@dataclass
class ConsistencyReport:
    sup_costate_gap: float
    sup_mean_gap: float

    def to_dict(self):
        return {"sup_costate_gap": self.sup_costate_gap, "sup_mean_gap": self.sup_mean_gap}


def consistency_with_direct(model: GameModel, limit: LimitSolution,
                            outcome: TPBVOutcome) -> ConsistencyReport:
    """Compare the fixed-point costate with ``lambda2 xbar + chi1`` from the direct route."""
    if outcome.verdict != "unique" or outcome.s is None:
        raise ValueError("consistency check needs a unique, integrated boundary value solution")
    t = np.union1d(limit.xbar.t, outcome.s.t)
    direct_s = limit.lambda2(t) @ limit.xbar(t) + limit.chi1(t)
    ds = outcome.s(t) - direct_s
    dx = outcome.xbar(t) - limit.xbar(t)
    return ConsistencyReport(
        float(np.sqrt(np.sum(ds ** 2, axis=(1, 2))).max()),
        float(np.sqrt(np.sum(dx ** 2, axis=(1, 2))).max()),
    )


# ------------------------------------------------------------------ contraction constant

@dataclass
class ContractionEstimate:
    kappa0: float
    nodes: int
    refinement_gap: float              # |kappa0(nodes) - kappa0(nodes // 2 + 1)|
    profile: np.ndarray = field(repr=False)
    backend: str = ""

    def to_dict(self):
        return {"kappa0": self.kappa0, "nodes": self.nodes,
                "refinement_gap": self.refinement_gap, "backend": self.backend}


def _kappa_on_grid(model, lambda1, K, policy):
    n = model.n
    M = control_weight(model).M
    t = np.linspace(0.0, model.T, K)
    pol = _linear(policy)
    A, G = model.A, model.G
    f1 = integrate(lambda s, P: (A - M @ lambda1(s) + G) @ P, np.eye(n), 0.0, model.T, pol).path
    f2 = integrate(lambda s, P: (-A.T + lambda1(s) @ M) @ P, np.eye(n), 0.0, model.T, pol).path
    P1, P2 = f1(t), f2(t)
    P1inv, P2inv = np.linalg.inv(P1), np.linalg.inv(P2)
    H = model.Q @ model.Gamma - lambda1(t) @ G
    C = P1inv @ M @ P2
    E = P2inv @ H
    F = P2inv[-1] @ model.Qf @ model.Gammaf
    h = t[1] - t[0]
    return kernels.kappa_profile(P1, C, E, F, h)


def contraction_kappa0(model: GameModel, lambda1: MatrixPath = None, nodes: int = 401,
                       policy: GridPolicy = TIGHT_POLICY) -> ContractionEstimate:
    """Contraction constant of the fixed-point map on ``[0, T]`` by nested quadrature.

    The kernel ``Psi1(t, tau) M Psi2(tau, r) H(r)`` factors through the
    transition matrices from time 0, so each node pair costs one small
    matrix product. Spectral norms; composite Simpson in both variables;
    supremum over grid nodes. The refinement gap compares with a grid of
    ``nodes // 2 + 1`` points.
    """
    if nodes < 3 or nodes % 2 == 0:
        raise ValueError("nodes must be odd and at least 3")
    if lambda1 is None:
        lambda1 = solve_lambda1(model, policy)
    prof = _kappa_on_grid(model, lambda1, nodes, policy)
    coarse = _kappa_on_grid(model, lambda1, nodes // 2 + 1, policy)
    k0 = float(prof.max())
    return ContractionEstimate(k0, nodes, abs(k0 - float(coarse.max())), prof, kernels.BACKEND)


# ------------------------------------------------------------------ scalar non-uniqueness

def _require_nonuniqueness_regime(p: ScalarHatParams):
    if p.Delta_hat is None or p.Delta_hat <= 1e-12 or p.c1 is None or p.c1 <= 0:
        raise ModelError("requires 0 < Q_hat < a_hat^2 with a_hat < 0 (Delta_hat > 0, c1 > 0)")


def find_hat_T(p: ScalarHatParams) -> float:
    """Horizon at which the costate block of the scalar transition matrix vanishes."""
    _require_nonuniqueness_regime(p)
    return math.log(p.c2 / p.c1) / (2 * math.sqrt(p.Delta_hat))


def scalar_transition_blocks(p: ScalarHatParams, dt):
    """Closed-form ``(Phi21, Phi22)`` at elapsed time ``dt`` (constant ``L1``)."""
    if p.Delta_hat is None or p.Delta_hat <= 0:
        raise ModelError("closed-form transition blocks need Delta_hat > 0")
    r = 2 * math.sqrt(p.Delta_hat)
    e1, e2 = np.exp(p.lambda_1 * np.asarray(dt)), np.exp(p.lambda_2 * np.asarray(dt))
    return p.c1 * p.c2 * (e1 - e2) / r, (p.c2 * e2 - p.c1 * e1) / r


def find_hat_T_numeric(model: GameModel, T_max: float, policy: GridPolicy = TIGHT_POLICY) -> float:
    """Root of ``Phi22(T, 0)`` in ``(0, T_max]`` from the integrated transition matrix."""
    m = model.replace(T=T_max)
    l1 = solve_lambda1(m, policy)
    gen = tpbv_generator(m, l1)
    n = m.n
    fwd = integrate(lambda t, P: gen(t) @ P, np.eye(2 * n), 0.0, T_max, _linear(policy)).path
    g = fwd.values[:, n, n]
    idx = np.nonzero(np.sign(g[1:]) != np.sign(g[:-1]))[0]
    if idx.size == 0:
        raise ValueError("no sign change of Phi22(., 0) on the interval")
    k = idx[0]
    return brentq(lambda t: fwd(t)[n, n], fwd.t[k], fwd.t[k + 1], xtol=1e-14, rtol=1e-15)


def _integral_phi22(p: ScalarHatParams, T_hat: float) -> float:
    l1, l2 = p.lambda_1, p.lambda_2
    return ((p.c2 * l1 * (math.exp(l2 * T_hat) - 1) - p.c1 * l2 * (math.exp(l1 * T_hat) - 1))
            / (2 * math.sqrt(p.Delta_hat) * l1 * l2))


def find_hat_x0(model: GameModel, p: ScalarHatParams = None, T_hat: float = None) -> float:
    """Initial mean making the boundary system consistent at ``T = T_hat``."""
    p = p or scalar_hat_params(model)
    T_hat = find_hat_T(p) if T_hat is None else T_hat
    phi21, _ = scalar_transition_blocks(p, T_hat)
    Qeta = float(model.Q[0, 0] * model.eta[0])
    return float((-p.lambda1_inf * model.etaf[0] - Qeta * _integral_phi22(p, T_hat)) / phi21)


def find_hat_x0_numeric(model: GameModel, T_hat: float, policy: GridPolicy = TIGHT_POLICY) -> float:
    """Same quantity from integrated transition matrices and their integral."""
    m = model.replace(T=T_hat)
    blocks = fundamental_matrix(m, solve_lambda1(m, policy), policy)
    phi21 = blocks.at_T()[1, 0]
    w22 = blocks.integral.values[0][1, 1]
    Qeta = float(m.Q[0, 0] * m.eta[0])
    return float((-(m.Qf @ m.etaf)[0] - w22 * Qeta) / phi21)


@dataclass
class NonUniqInstance:
    model: GameModel
    T_hat: float
    x0_hat: float
    phi22_relative: float
    witnesses: list
    paths: list = field(repr=False)
    terminal_residuals: list = field(default_factory=list)
    outcome: Optional[TPBVOutcome] = None


def build_nonuniqueness_instance(model: GameModel, s0_witnesses=(-1.0, 0.0, 1.0),
                                 tol: float = 1e-6,
                                 policy: GridPolicy = TIGHT_POLICY) -> NonUniqInstance:
    """Scalar instance with infinitely many boundary value solutions.

    Sets ``T = T_hat`` and ``x0 = x0_hat`` and integrates one solution per
    witness initial costate; each must meet the terminal condition to ``tol``.
    """
    p = scalar_hat_params(model)
    if abs(model.Qf[0, 0] - p.lambda1_inf) > 1e-10 * max(1.0, p.lambda1_inf) or np.any(model.Gammaf):
        raise ModelError("requires Qf = A + sqrt(A^2 + Q) and Gammaf = 0")
    T_hat = find_hat_T(p)
    x0_hat = find_hat_x0(model, p, T_hat)
    m = model.replace(T=T_hat)
    l1 = solve_lambda1(m, policy)
    blocks = fundamental_matrix(m, l1, policy)
    outcome = classify(m, blocks, [x0_hat])
    phi22_rel = abs(float(outcome.Z1[0, 0])) / outcome.scale
    paths, resid = [], []
    for w in s0_witnesses:
        xb, s, r = solve_tpbv_forward(m, l1, [x0_hat], [w], policy)
        if r > tol:
            raise ValueError(f"witness s(0) = {w} misses the terminal condition by {r:.3g}")
        paths.append((xb, s))
        resid.append(r)
    return NonUniqInstance(m, T_hat, x0_hat, phi22_rel, list(s0_witnesses), paths, resid, outcome)


def write_solution_csv(path, xbar: MatrixPath, s: MatrixPath):
    """Rows ``t,xbar,s`` (vector states expand to ``xbar_1,...,s_1,...``)."""
    n = xbar.shape[0]
    names = (["xbar", "s"] if n == 1 else
             [f"xbar_{i + 1}" for i in range(n)] + [f"s_{i + 1}" for i in range(n)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + names)
        for t in xbar.t:
            row = np.concatenate([xbar(t).ravel(), s(t).ravel()])
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
