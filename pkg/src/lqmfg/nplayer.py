"""Exact finite-N game by the direct approach.

The symmetric N-player Nash system collapses to four n x n Riccati blocks
(own-state, cross, and two other-player blocks), two offset vectors and a
scalar. :func:`solve_full_oracle` integrates the unreduced coupled system for
every player at once and is used only to check the reduction for small N.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .integrate import (
    DEFAULT_POLICY,
    FiniteEscapeError,
    GridPolicy,
    MatrixPath,
    integrate_backward,
)
from .model import GameModel, ModelError, control_weight
from .riccati import LimitSolution, solve_limit

__all__ = [
    "ReducedBlocks",
    "FullSolution",
    "NashGains",
    "RateReport",
    "solve_reduced",
    "solve_full_oracle",
    "assemble_P1",
    "assemble_S1",
    "nash_gains",
    "rate_study",
    "exchange_matrix",
    "fit_loglog_slope",
]


def _slice_path(path: MatrixPath, lo: int, hi: int, shape) -> MatrixPath:
    k = len(path)
    return MatrixPath(path.grid,
                      path.values[:, lo:hi, 0].reshape((k,) + shape),
                      path.slopes[:, lo:hi, 0].reshape((k,) + shape))


@dataclass
class ReducedBlocks:
    N: int
    pi1: MatrixPath
    pi2: MatrixPath
    pi3: MatrixPath
    pi4: MatrixPath
    theta1: MatrixPath
    theta2: MatrixPath
    r: MatrixPath

    @property
    def pi3_pi4_gap(self) -> float:
        """Sup over nodes of the Frobenius norm of ``pi3 - pi4``."""
        return float(np.sqrt(np.sum((self.pi3.values - self.pi4.values) ** 2, axis=(1, 2))).max())


def solve_reduced(model: GameModel, N: int,
                  policy: GridPolicy = DEFAULT_POLICY) -> ReducedBlocks:
    """Integrate the reduced block system for population size ``N``.

    All four blocks are integrated independently, so the identity of the two
    other-player blocks is an outcome, not an assumption.
    Raises :class:`FiniteEscapeError` when the finite-N system blows up.
    """
    if int(N) != N or N < 2:
        raise ModelError(f"population size must be an integer >= 2, got {N}")
    N = int(N)
    n = model.n
    M = control_weight(model).M
    A, G, Q = model.A, model.G, model.Q
    Gm, Gf, Qf = model.Gamma, model.Gammaf, model.Qf
    eta = model.eta[:, None]
    I = np.eye(n)
    c = 1.0 / N
    KQ = (I - c * Gm.T) @ Q
    fQ1 = KQ @ (I - c * Gm)
    fQ2 = KQ @ Gm * c
    fQ3 = c * c * Gm.T @ Q @ Gm
    fT1 = KQ @ eta
    fT2 = c * Gm.T @ Q @ eta
    etaQeta = (eta.T @ Q @ eta).item()
    DDt = model.D @ model.D.T
    A1 = A + c * G                    # A + G/N
    A2 = A + (N - 2) * c * G          # A + (N-2)G/N
    A3 = A + (N - 1) * c * G          # A + (N-1)G/N
    nn = n * n
    offs = np.cumsum([0, nn, nn, nn, nn, n, n, 1])

    def unpack(y):
        P1, P2, P3, P4 = (y[offs[i]:offs[i + 1]].reshape(n, n) for i in range(4))
        th1 = y[offs[4]:offs[5]].reshape(n, 1)
        th2 = y[offs[5]:offs[6]].reshape(n, 1)
        return P1, P2, P3, P4, th1, th2

    def rhs(t, y):
        P1, P2, P3, P4, th1, th2 = unpack(y)
        P2t = P2.T
        MP1, MP2, MP2t = M @ P1, M @ P2, M @ P2t
        dP1 = (P1 @ MP1 + (N - 1) * (P2 @ MP2t + P2t @ MP2)
               - (P1 @ A1 + A1.T @ P1) - (1 - c) * (P2 @ G + G.T @ P2t) - fQ1)
        dP2 = (P1 @ MP2 + P2 @ MP1 + P2t @ M @ P3 + (N - 2) * P2 @ MP2
               + (N - 2) * P2t @ M @ P4
               - (c * P1 @ G + c * G.T @ P3 + (N - 2) * c * G.T @ P4
                  + P2 @ A3 + A1.T @ P2)
               + fQ2)
        dP3 = (P2t @ MP2 + P3 @ MP1 + P1 @ M @ P3 + (N - 2) * (P4 @ MP2 + P2t @ M @ P4)
               - (c * (P2t @ G + G.T @ P2) + P3 @ A1 + A1.T @ P3
                  + (N - 2) * c * (P4 @ G + G.T @ P4))
               - fQ3)
        dP4 = (P2t @ MP2 + P4 @ MP1 + P1 @ M @ P4 + P3 @ MP2 + P2t @ M @ P3
               + (N - 3) * (P4 @ MP2 + P2t @ M @ P4)
               - (c * (P2t @ G + G.T @ P2 + P3 @ G + G.T @ P3)
                  + P4 @ A2 + A2.T @ P4)
               - fQ3)
        Mth1, Mth2 = M @ th1, M @ th2
        dth1 = (P1 @ Mth1 + (N - 1) * (P2 @ Mth1 + P2t @ Mth2)
                - A1.T @ th1 - (N - 1) * c * G.T @ th2 + fT1)
        dth2 = ((P2t + (N - 1) * P3) @ Mth1 + (P1 + (N - 2) * P2t) @ Mth2
                - c * G.T @ th1 - A3.T @ th2 - fT2)
        dr = (float(np.vdot(th1, Mth1)) + 2 * (N - 1) * float(np.vdot(th2, Mth1))
              - float(np.sum(DDt * P1)) - (N - 1) * float(np.sum(DDt * P3)) - etaQeta)
        return np.concatenate([dP1.ravel(), dP2.ravel(), dP3.ravel(), dP4.ravel(),
                               dth1.ravel(), dth2.ravel(), [dr]])

    def project(y):
        y = y.copy()
        for i in (0, 2, 3):
            X = y[offs[i]:offs[i + 1]].reshape(n, n)
            y[offs[i]:offs[i + 1]] = (0.5 * (X + X.T)).ravel()
        return y

    Kf = I - c * Gf.T
    etaf = model.etaf[:, None]
    P34T = c * c * Gf.T @ Qf @ Gf
    y_T = np.concatenate([
        (Kf @ Qf @ (I - c * Gf)).ravel(),
        (-c * Kf @ Qf @ Gf).ravel(),
        P34T.ravel(), P34T.ravel(),
        (-Kf @ Qf @ etaf).ravel(),
        (c * Gf.T @ Qf @ etaf).ravel(),
        [(etaf.T @ Qf @ etaf).item()],
    ])
    res = integrate_backward(rhs, y_T, model.T, 0.0, policy, project=project)
    if res.escaped:
        raise FiniteEscapeError(res.escape, f"finite-N system (N={N})")
    p = res.path
    return ReducedBlocks(
        N=N,
        pi1=_slice_path(p, offs[0], offs[1], (n, n)),
        pi2=_slice_path(p, offs[1], offs[2], (n, n)),
        pi3=_slice_path(p, offs[2], offs[3], (n, n)),
        pi4=_slice_path(p, offs[3], offs[4], (n, n)),
        theta1=_slice_path(p, offs[4], offs[5], (n, 1)),
        theta2=_slice_path(p, offs[5], offs[6], (n, 1)),
        r=_slice_path(p, offs[6], offs[7], (1, 1)),
    )


# ------------------------------------------------------------------ full oracle

@dataclass
class FullSolution:
    """Unreduced solution of the coupled N-player system (oracle only)."""

    N: int
    n: int
    P: list = field(repr=False)
    S: list = field(repr=False)
    r: list = field(repr=False)

    @property
    def bigP(self) -> MatrixPath:
        return self.P[0]

    @property
    def bigS(self) -> MatrixPath:
        return self.S[0]


def exchange_matrix(N: int, n: int, i: int, j: int) -> np.ndarray:
    """Permutation ``J_ij`` swapping the state blocks of players ``i`` and ``j`` (0-based)."""
    perm = list(range(N))
    perm[i], perm[j] = perm[j], perm[i]
    return np.kron(np.eye(N)[perm], np.eye(n))


def solve_full_oracle(model: GameModel, N: int,
                      policy: GridPolicy = DEFAULT_POLICY) -> FullSolution:
    """Integrate the Nash system for all N players as one flat state.

    No symmetry or exchangeability is imposed: each player's value matrix,
    offset and constant evolve independently.
    """
    if N not in (2, 3, 4):
        raise ModelError("the full oracle is restricted to N in {2, 3, 4}")
    n = model.n
    Nn = N * n
    M = control_weight(model).M
    Q, Qf = model.Q, model.Qf
    eta, etaf = model.eta, model.etaf
    Ahat = np.kron(np.eye(N), model.A) + np.kron(np.ones((N, N)), model.G) / N
    Dhat = np.kron(np.eye(N), model.D)
    DDt = Dhat @ Dhat.T
    etaQeta = float(eta @ Q @ eta)

    def K(i, Gm):
        return np.kron(np.eye(N)[i:i + 1], np.eye(n)) - np.kron(np.ones((1, N)), Gm) / N

    Ks = [K(i, model.Gamma) for i in range(N)]
    Kfs = [K(i, model.Gammaf) for i in range(N)]
    Qs = [Kk.T @ Q @ Kk for Kk in Ks]
    Qeta = [Kk.T @ Q @ eta for Kk in Ks]
    blk = [slice(k * n, (k + 1) * n) for k in range(N)]
    sz_P, sz_S = N * Nn * Nn, N * Nn

    def unpack(y):
        P = y[:sz_P].reshape(N, Nn, Nn)
        S = y[sz_P:sz_P + sz_S].reshape(N, Nn)
        return P, S

    def rhs(t, y):
        P, S = unpack(y)
        W = np.zeros((Nn, Nn))          # sum_k E_k P_k
        V = np.zeros((Nn, Nn))          # sum_k P_k E_k
        w = np.zeros(Nn)                # sum_k E_k S_k
        for k in range(N):
            W[blk[k], :] = M @ P[k][blk[k], :]
            V[:, blk[k]] = P[k][:, blk[k]] @ M
            w[blk[k]] = M @ S[k][blk[k]]
        dP = np.empty_like(P)
        dS = np.empty_like(S)
        dr = np.empty(N)
        for i in range(N):
            Pi, Si = P[i], S[i]
            PiEi = np.zeros((Nn, Nn))
            PiEi[:, blk[i]] = Pi[:, blk[i]] @ M
            EiSi = np.zeros(Nn)
            EiSi[blk[i]] = M @ Si[blk[i]]
            dP[i] = (-(Pi @ Ahat + Ahat.T @ Pi) + Pi @ W + V @ Pi
                     - PiEi @ Pi - Qs[i])
            dS[i] = (-Ahat.T @ Si + Pi @ w + V @ Si - Pi @ EiSi + Qeta[i])
            dr[i] = 2 * Si @ w - Si @ EiSi - etaQeta - float(np.sum(DDt * Pi))
        return np.concatenate([dP.ravel(), dS.ravel(), dr])

    y_T = np.concatenate([
        np.stack([Kf.T @ Qf @ Kf for Kf in Kfs]).ravel(),
        np.stack([-Kf.T @ Qf @ etaf for Kf in Kfs]).ravel(),
        np.full(N, float(etaf @ Qf @ etaf)),
    ])
    res = integrate_backward(rhs, y_T, model.T, 0.0, policy)
    if res.escaped:
        raise FiniteEscapeError(res.escape, f"full N-player system (N={N})")
    p = res.path
    P = [_slice_path(p, i * Nn * Nn, (i + 1) * Nn * Nn, (Nn, Nn)) for i in range(N)]
    S = [_slice_path(p, sz_P + i * Nn, sz_P + (i + 1) * Nn, (Nn, 1)) for i in range(N)]
    r = [_slice_path(p, sz_P + sz_S + i, sz_P + sz_S + i + 1, (1, 1)) for i in range(N)]
    return FullSolution(N, n, P, S, r)


def assemble_P1(blocks: ReducedBlocks, t: float) -> np.ndarray:
    """Player-1 value matrix: ``pi1`` top-left, ``pi2`` on the first block row,
    ``pi2^T`` on the first block column and ``pi3`` on every other block."""
    N = blocks.N
    P1, P2, P3 = blocks.pi1(t), blocks.pi2(t), blocks.pi3(t)
    n = P1.shape[0]
    out = np.kron(np.ones((N, N)), P3)
    out[:n, :n] = P1
    out[:n, n:] = np.tile(P2, (1, N - 1))
    out[n:, :n] = np.tile(P2.T, (N - 1, 1))
    return out


def assemble_S1(blocks: ReducedBlocks, t: float) -> np.ndarray:
    th1, th2 = blocks.theta1(t), blocks.theta2(t)
    return np.vstack([th1] + [th2] * (blocks.N - 1))


@dataclass(frozen=True)
class NashGains:
    """Affine feedback ``u_i = K_self X_i + K_other sum_{j != i} X_j + offset``."""

    K_self: np.ndarray
    K_other: np.ndarray
    offset: np.ndarray


def _feedback_factor(model: GameModel) -> np.ndarray:
    return -np.linalg.solve(model.R, model.B.T)


def nash_gains(model: GameModel, blocks: ReducedBlocks, t: float) -> NashGains:
    F = _feedback_factor(model)
    return NashGains(F @ blocks.pi1(t), F @ blocks.pi2(t), (F @ blocks.theta1(t)).ravel())


# ------------------------------------------------------------------ rate study

def fit_loglog_slope(Ns, errors, floor: float = 1e-12) -> float:
    """Least-squares slope of ``log(error)`` against ``log(N)``, ignoring values below ``floor``."""
    Ns = np.asarray(Ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors > floor
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(Ns[keep]), np.log(errors[keep]), 1)[0])


@dataclass
class RateReport:
    Ns: list
    err_pi1: list
    err_pi2_scaled: list
    err_pi3_scaled: list
    err_theta1: list
    err_theta2_scaled: list
    slopes: dict

    _COLUMNS = ("err_pi1", "err_pi2_scaled", "err_pi3_scaled", "err_theta1", "err_theta2_scaled")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("N",) + self._COLUMNS)
            for k, N in enumerate(self.Ns):
                w.writerow([N] + [repr(float(getattr(self, c)[k])) for c in self._COLUMNS])

    def to_dict(self) -> dict:
        d = {"Ns": list(self.Ns), "slopes": dict(self.slopes)}
        for c in self._COLUMNS:
            d[c] = [float(x) for x in getattr(self, c)]
        return d


def _sup_diff(a: MatrixPath, b: MatrixPath, t, scale: float = 1.0) -> float:
    d = scale * a(t) - b(t)
    return float(np.sqrt(np.sum(d * d, axis=(1, 2))).max())


def rate_study(model: GameModel, Ns, policy: GridPolicy = DEFAULT_POLICY,
               limit: LimitSolution = None) -> RateReport:
    """Sup-norm distance between re-scaled finite-N blocks and the limit, per N.

    Errors are compared on the limit solution's grid. Raises
    :class:`FiniteEscapeError` when the limit system has no solution on ``[0, T]``.
    """
    Ns = sorted(int(N) for N in Ns)
    if len(Ns) < 2:
        raise ValueError("rate study needs at least two population sizes")
    if limit is None:
        limit = solve_limit(model, policy=policy)
    t = limit.lambda1.t
    cols = {c: [] for c in RateReport._COLUMNS}
    for N in Ns:
        b = solve_reduced(model, N, policy)
        cols["err_pi1"].append(_sup_diff(b.pi1, limit.lambda1, t))
        cols["err_pi2_scaled"].append(_sup_diff(b.pi2, limit.lambda2, t, N))
        cols["err_pi3_scaled"].append(_sup_diff(b.pi3, limit.lambda3, t, N * N))
        cols["err_theta1"].append(_sup_diff(b.theta1, limit.chi1, t))
        cols["err_theta2_scaled"].append(_sup_diff(b.theta2, limit.chi2, t, N))
    slopes = {c: fit_loglog_slope(Ns, v) for c, v in cols.items()}
    return RateReport(Ns=Ns, slopes=slopes, **cols)
