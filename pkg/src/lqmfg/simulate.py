"""Monte Carlo simulation of the N-player system under a feedback profile.

Each strategy profile is an affine feedback

    u_i = K_self(t) X_i + K_other(t) sum_{j != i} X_j + k(t)

which covers the exact finite-N Nash law, the decentralized law built from
the limiting system and the fixed-point law built from the boundary value
solution. The ensemble is stepped by Euler-Maruyama with Philox-addressed
noise, so a draw depends only on (seed, step, path, player).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .integrate import MatrixPath
from .model import GameModel, ModelError
from .nplayer import ReducedBlocks
from .riccati import LimitSolution

__all__ = [
    "InitialLaw",
    "SimConfig",
    "StrategyProfile",
    "EnsembleStats",
    "CostSample",
    "simulate_ensemble",
    "evaluate_cost",
]


@dataclass(frozen=True)
class InitialLaw:
    """Initial states ``X_i(0) = mean_i + chol @ z_i`` with standard normal ``z_i``.

    ``mean`` is one n-vector shared by all players or an ``(N, n)`` array.
    ``cov`` of ``None`` gives deterministic initial states.
    """

    mean: np.ndarray
    cov: Optional[np.ndarray] = None

    def means(self, N: int, n: int) -> np.ndarray:
        m = np.asarray(self.mean, dtype=float)
        if m.ndim <= 1:
            m = np.broadcast_to(m.reshape(-1) if m.ndim else np.full(n, float(m)), (N, n))
        if m.shape != (N, n):
            raise ModelError(f"initial means have shape {m.shape}, expected {(N, n)}")
        return np.ascontiguousarray(m)

    def chol(self, n: int) -> np.ndarray:
        if self.cov is None:
            return np.zeros((n, n))
        c = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if c.shape != (n, n):
            raise ModelError("initial covariance has the wrong shape")
        return np.linalg.cholesky(c)

    def population_mean(self, N: int, n: int) -> np.ndarray:
        return self.means(N, n).mean(axis=0)


@dataclass(frozen=True)
class SimConfig:
    N: int
    paths: int
    seed: int
    initial_law: InitialLaw
    dt: Optional[float] = None          # defaults to T / 2000

    def steps(self, T: float) -> int:
        dt = T / 2000 if self.dt is None else self.dt
        if not dt > 0:
            raise ModelError("dt must be positive")
        k = int(round(T / dt))
        if k < 1 or abs(k * dt - T) > 1e-12 * max(1.0, T):
            raise ModelError(f"dt = {dt!r} does not divide T = {T!r}")
        return k

    def __post_init__(self):
        if self.N < 1 or self.paths < 1:
            raise ModelError("N and paths must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ModelError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class StrategyProfile:
    """Affine feedback profile; ``coefficients(t)`` returns stacked ``(K_self, K_other, k)``."""

    kind: str
    t0: float
    t1: float
    coefficients: Callable = field(repr=False)

    def covers(self, T: float) -> bool:
        return self.t0 <= 1e-12 and abs(self.t1 - T) <= 1e-9 * max(1.0, T)

    @staticmethod
    def _factor(model):
        return -np.linalg.solve(model.R, model.B.T)

    @classmethod
    def exact_nash(cls, model: GameModel, blocks: ReducedBlocks) -> "StrategyProfile":
        F = cls._factor(model)

        def coef(t):
            return F @ blocks.pi1(t), F @ blocks.pi2(t), (F @ blocks.theta1(t))[..., 0]

        g = blocks.pi1.grid
        return cls("exact_nash", g.t0, g.t1, coef)

    @classmethod
    def direct_decentralized(cls, model: GameModel, limit: LimitSolution) -> "StrategyProfile":
        F = cls._factor(model)
        n1, n = F.shape

        def coef(t):
            Ks = F @ limit.lambda1(t)
            off = F @ (limit.lambda2(t) @ limit.xbar(t) + limit.chi1(t))
            return Ks, np.zeros_like(Ks), off[..., 0]

        g = limit.lambda1.grid
        return cls("direct_decentralized", g.t0, g.t1, coef)

    @classmethod
    def fixed_point(cls, model: GameModel, lambda1: MatrixPath, s: MatrixPath) -> "StrategyProfile":
        F = cls._factor(model)

        def coef(t):
            Ks = F @ lambda1(t)
            return Ks, np.zeros_like(Ks), (F @ s(t))[..., 0]

        return cls("fixed_point", max(lambda1.grid.t0, s.grid.t0),
                   min(lambda1.grid.t1, s.grid.t1), coef)


@dataclass
class EnsembleStats:
    t: np.ndarray
    mean_path: np.ndarray               # ensemble average of the population mean, (K+1, n)
    mse_path: Optional[np.ndarray]      # E|X^(N)(t) - xbar(t)|^2 per node
    mse_se: Optional[np.ndarray]
    mse_vs_xbar: Optional[float]        # sup over nodes of mse_path
    cost_mean: np.ndarray               # per-player cost estimates
    cost_se: np.ndarray
    N: int
    paths: int
    dt: float
    backend: str
    population_means: np.ndarray = field(repr=False, default=None)
    costs: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "N": self.N, "paths": self.paths, "dt": self.dt, "backend": self.backend,
            "mse_vs_xbar": self.mse_vs_xbar,
            "cost_mean": self.cost_mean.tolist(),
            "cost_se": self.cost_se.tolist(),
        }

    def to_csv(self, path):
        n = self.mean_path.shape[1]
        head = ["t"] + [f"mean_{a + 1}" for a in range(n)]
        if self.mse_path is not None:
            head += ["mse", "mse_se"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            for k, t in enumerate(self.t):
                row = [t] + list(self.mean_path[k])
                if self.mse_path is not None:
                    row += [self.mse_path[k], self.mse_se[k]]
                w.writerow([repr(float(v)) for v in row])


def simulate_ensemble(model: GameModel, config: SimConfig, profile: StrategyProfile,
                      xbar: MatrixPath = None, stream_ids=None,
                      path_offset: int = 0, keep_samples: bool = False) -> EnsembleStats:
    """Euler-Maruyama ensemble of the N-player closed loop.

    ``xbar`` (optional) is the reference mean field for the mean-square error.
    ``stream_ids`` relabels whose noise each player receives (default: own
    index), which is how exchangeability is tested.
    """
    if not profile.covers(model.T):
        raise ModelError("strategy coefficients do not cover [0, T]")
    N, n = config.N, model.n
    K = config.steps(model.T)
    dt = model.T / K
    t = np.linspace(0.0, model.T, K + 1)
    Ks, Ko, kk = profile.coefficients(t)
    B = model.B
    F_self = model.A + B @ (Ks - Ko)
    F_sum = B @ Ko + model.G / N
    f = kk @ B.T
    law = config.initial_law
    sid = np.arange(N, dtype=np.uint32) if stream_ids is None else np.asarray(stream_ids, dtype=np.uint32)
    if sid.shape != (N,):
        raise ModelError("one stream id per player is required")
    means, costs = kernels.em_ensemble(
        F_self, F_sum, f, Ks, Ko, kk, model.D, law.means(N, n), law.chol(n), dt,
        config.paths, int(config.seed), sid, model.Q, model.R, model.Gamma, model.eta,
        model.Qf, model.Gammaf, model.etaf, path_offset)
    P = config.paths
    mse_path = mse_se = mse_sup = None
    if xbar is not None:
        err = np.sum((means - xbar(t)[None, :, :, 0]) ** 2, axis=2)      # (paths, K+1)
        mse_path = err.mean(axis=0)
        mse_se = err.std(axis=0, ddof=1) / math.sqrt(P) if P > 1 else np.full(K + 1, np.nan)
        mse_sup = float(mse_path.max())
    cost_se = costs.std(axis=0, ddof=1) / math.sqrt(P) if P > 1 else np.full(N, np.nan)
    return EnsembleStats(
        t=t, mean_path=means.mean(axis=0), mse_path=mse_path, mse_se=mse_se,
        mse_vs_xbar=mse_sup, cost_mean=costs.mean(axis=0), cost_se=cost_se,
        N=N, paths=P, dt=dt, backend=kernels.BACKEND,
        population_means=means if keep_samples else None,
        costs=costs if keep_samples else None,
    )


@dataclass(frozen=True)
class CostSample:
    samples: np.ndarray
    mean: float
    se: float


def evaluate_cost(model: GameModel, t, X_i, X_mean, u) -> CostSample:
    """Realized cost of one player from sampled paths.

    ``X_i`` and ``X_mean`` are ``(members, K+1, n)`` (or ``(K+1, n)`` for one
    member) and ``u`` is ``(members, K+1, n1)``. Running cost by the
    trapezoid rule on ``t`` plus the terminal cost.
    """
    t = np.asarray(t, dtype=float)
    X_i, X_mean, u = (np.asarray(a, dtype=float) for a in (X_i, X_mean, u))
    if X_i.ndim == 2:
        X_i, X_mean, u = X_i[None], X_mean[None], u[None]
    if not (X_i.shape[1] == X_mean.shape[1] == u.shape[1] == t.size):
        raise ModelError("paths and time grid do not match")
    e = X_i - X_mean @ model.Gamma.T - model.eta
    run = np.einsum("pka,ab,pkb->pk", e, model.Q, e) + np.einsum("pka,ab,pkb->pk", u, model.R, u)
    dt = np.diff(t)
    integral = np.sum(0.5 * (run[:, 1:] + run[:, :-1]) * dt, axis=1)
    ef = X_i[:, -1] - X_mean[:, -1] @ model.Gammaf.T - model.etaf
    samples = integral + np.einsum("pa,ab,pb->p", ef, model.Qf, ef)
    se = float(samples.std(ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else float("nan")
    return CostSample(samples, float(samples.mean()), se)
