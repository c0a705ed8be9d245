"""ODE engine for the Riccati and linear systems.

Adaptive Dormand-Prince 5(4) with error control ``rtol*|y| + atol`` or
classical fixed-step RK4. Integration toward earlier times is done through
``tau = T - t`` so both directions share one code path. Solutions are
returned as :class:`MatrixPath` objects with cubic Hermite dense output.

A state whose Frobenius norm exceeds ``norm_escape`` is treated as a finite
escape; the crossing is bracketed by bisection on the last accepted step.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

__all__ = [
    "GridPolicy",
    "TimeGrid",
    "MatrixPath",
    "EscapeReport",
    "OdeResult",
    "FiniteEscapeError",
    "IntegrationError",
    "integrate",
    "integrate_backward",
    "integrate_forward",
    "POLICIES",
    "DEFAULT_POLICY",
    "TIGHT_POLICY",
]


@dataclass(frozen=True)
class GridPolicy:
    kind: str = "adaptive"
    rtol: float = 1e-9
    atol: float = 1e-12
    steps: int = 2000
    norm_escape: float = 1e9
    h_min_rel: float = 1e-12
    # caps the step so cubic Hermite dense output stays near the step tolerance
    h_max_rel: float = 1 / 400
    max_steps: int = 500_000

    def __post_init__(self):
        if self.kind not in ("adaptive", "fixed"):
            raise ValueError(f"unknown grid policy kind {self.kind!r}")

    def fixed(self, steps: int) -> "GridPolicy":
        return replace(self, kind="fixed", steps=int(steps))


DEFAULT_POLICY = GridPolicy()
TIGHT_POLICY = GridPolicy(rtol=1e-12, atol=1e-14)
POLICIES = {
    "coarse": GridPolicy(rtol=1e-7, atol=1e-10),
    "default": DEFAULT_POLICY,
    "fine": GridPolicy(rtol=1e-11, atol=1e-14),
}


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray
    kind: str = "adaptive"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a time grid needs at least two nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("time grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def t0(self) -> float:
        return float(self.nodes[0])

    @property
    def t1(self) -> float:
        return float(self.nodes[-1])

    def __len__(self):
        return self.nodes.size


class MatrixPath:
    """Time-gridded matrix-valued function with cubic Hermite interpolation.

    ``values[k]`` is the matrix at ``grid.nodes[k]`` and ``slopes[k]`` its time
    derivative; when slopes are not supplied they are estimated by finite
    differences.
    """

    def __init__(self, grid: TimeGrid, values, slopes=None):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != len(grid):
            raise ValueError("one value per grid node is required")
        if values.ndim == 1:
            values = values[:, None, None]
        elif values.ndim == 2:
            values = values[:, :, None]
        if slopes is None:
            if len(grid) > 2:
                slopes = np.gradient(values, grid.nodes, axis=0, edge_order=2)
            else:
                slopes = np.gradient(values, grid.nodes, axis=0)
        slopes = np.asarray(slopes, dtype=float).reshape(values.shape)
        self.grid = grid
        self.values = values
        self.slopes = slopes

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def shape(self) -> tuple:
        return self.values.shape[1:]

    def __len__(self):
        return self.values.shape[0]

    def __repr__(self):
        return (f"MatrixPath(shape={self.shape}, nodes={len(self)}, "
                f"t=[{self.grid.t0:g}, {self.grid.t1:g}])")

    def __call__(self, t):
        """Evaluate at a time or an array of times (clamped to the grid)."""
        if np.ndim(t) == 0:
            return self._eval_scalar(float(t))
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        nodes = self.grid.nodes
        tt = np.clip(tt, nodes[0], nodes[-1])
        k = np.clip(np.searchsorted(nodes, tt, side="right") - 1, 0, nodes.size - 2)
        h = nodes[k + 1] - nodes[k]
        s = (tt - nodes[k]) / h
        s2, s3 = s * s, s * s * s
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        ex = (slice(None),) + (None,) * (self.values.ndim - 1)
        out = (h00[ex] * self.values[k] + (h10 * h)[ex] * self.slopes[k]
               + h01[ex] * self.values[k + 1] + (h11 * h)[ex] * self.slopes[k + 1])
        return out

    def _eval_scalar(self, t: float) -> np.ndarray:
        nodes = self._nodes_list
        K = len(nodes)
        if t <= nodes[0]:
            return self.values[0].copy()
        if t >= nodes[-1]:
            return self.values[-1].copy()
        k = bisect.bisect_right(nodes, t) - 1
        k = min(max(k, 0), K - 2)
        t0, t1 = nodes[k], nodes[k + 1]
        h = t1 - t0
        s = (t - t0) / h
        s2 = s * s
        s3 = s2 * s
        return ((2 * s3 - 3 * s2 + 1) * self.values[k] + ((s3 - 2 * s2 + s) * h) * self.slopes[k]
                + (3 * s2 - 2 * s3) * self.values[k + 1] + ((s3 - s2) * h) * self.slopes[k + 1])

    @property
    def _nodes_list(self) -> list:
        cache = self.__dict__.get("_nodes_cache")
        if cache is None:
            cache = self.grid.nodes.tolist()
            self.__dict__["_nodes_cache"] = cache
        return cache

    def block(self, rows: slice, cols: slice) -> "MatrixPath":
        return MatrixPath(self.grid, self.values[:, rows, cols], self.slopes[:, rows, cols])

    def transform(self, fn: Callable, dfn: Callable = None) -> "MatrixPath":
        """Apply ``fn`` nodewise; ``dfn(value, slope)`` gives the new slope."""
        vals = np.array([fn(v) for v in self.values])
        slopes = None if dfn is None else np.array(
            [dfn(v, s) for v, s in zip(self.values, self.slopes)])
        return MatrixPath(self.grid, vals, slopes)

    def norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values ** 2, axis=(1, 2)))

    def sup_norm(self) -> float:
        return float(self.norms().max())

    def to_csv(self, path, name: str = "x"):
        """Write ``t,<name>_11,<name>_12,...`` rows with shortest round-trip floats."""
        p, q = self.shape
        header = ["t"] + [f"{name}_{i + 1}{j + 1}" for i in range(p) for j in range(q)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, v in zip(self.t, self.values):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in v.ravel()])


@dataclass
class EscapeReport:
    """Finite escape located inside ``[t_lo, t_hi]`` (original time axis)."""

    t_lo: float
    t_hi: float
    max_norm: float
    path: Optional[MatrixPath] = None

    @property
    def estimate(self) -> float:
        return 0.5 * (self.t_lo + self.t_hi)

    @property
    def width(self) -> float:
        return self.t_hi - self.t_lo


class FiniteEscapeError(RuntimeError):
    def __init__(self, report: EscapeReport, what: str = "solution"):
        self.report = report
        super().__init__(
            f"{what} escapes at t ~ {report.estimate:.10g} "
            f"(bracket [{report.t_lo:.12g}, {report.t_hi:.12g}])")


class IntegrationError(RuntimeError):
    """Step-size underflow or step budget exhausted without a norm blow-up."""

    def __init__(self, message, bracket=None):
        self.bracket = bracket
        super().__init__(message)


@dataclass
class OdeResult:
    path: MatrixPath
    escape: Optional[EscapeReport]
    nfev: int
    max_norm: float

    @property
    def escaped(self) -> bool:
        return self.escape is not None


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


def _dp_step(g, tau, y, k1, h):
    ks = [k1]
    for i in range(1, 7):
        yi = y + h * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
        ks.append(g(tau + _C[i] * h, yi))
    y_new = y + h * sum(a * k for a, k in zip(_A[6], ks) if a != 0.0)
    err = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
    # last stage is evaluated at y_new (FSAL)
    return y_new, err, ks[6]


def _rk4_step(g, tau, y, h):
    k1 = g(tau, y)
    k2 = g(tau + h / 2, y + h / 2 * k1)
    k3 = g(tau + h / 2, y + h / 2 * k2)
    k4 = g(tau + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _initial_step(g, y0, f0, rtol, atol, span):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + h0 * f0
    f1 = g(h0, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def _fro(y):
    return float(np.sqrt(np.dot(y, y)))


def _march(g, y0, span, policy, project):
    """Integrate ``dy/dtau = g(tau, y)`` on ``[0, span]``.

    Returns (taus, ys, fs, escape_bracket, max_norm, nfev) where the bracket is
    ``None`` or a pair of tau values.
    """
    thr = policy.norm_escape
    h_min = policy.h_min_rel * span
    nfev = 0

    def gg(tau, y):
        nonlocal nfev
        nfev += 1
        return g(tau, y)

    y = np.array(y0, dtype=float)
    if project is not None:
        y = project(y)
    f = gg(0.0, y)
    taus, ys, fs = [0.0], [y.copy()], [f.copy()]
    max_norm = _fro(y)
    tau = 0.0

    if policy.kind == "fixed":
        h = span / policy.steps
        for k in range(policy.steps):
            y_new = _rk4_step(gg, tau, y, h)
            tau_new = span if k == policy.steps - 1 else (k + 1) * h
            if project is not None:
                y_new = project(y_new)
            nrm = _fro(y_new) if np.all(np.isfinite(y_new)) else math.inf
            if nrm > thr:
                max_norm = max(max_norm, nrm)
                if math.isfinite(nrm):
                    taus.append(tau_new)
                    ys.append(y_new)
                    fs.append(gg(tau_new, y_new))
                return taus, ys, fs, (tau, tau_new), max_norm, nfev
            y, tau = y_new, tau_new
            f = gg(tau, y)
            taus.append(tau)
            ys.append(y.copy())
            fs.append(f.copy())
            max_norm = max(max_norm, nrm)
        return taus, ys, fs, None, max_norm, nfev

    rtol, atol = policy.rtol, policy.atol
    h_max = policy.h_max_rel * span
    h = min(_initial_step(gg, y, f, rtol, atol, span), h_max)
    steps = 0
    while tau < span:
        if steps > policy.max_steps:
            raise IntegrationError(
                f"step budget exhausted at tau = {tau:.6g}", bracket=(tau, tau + h))
        h = min(h, span - tau)
        if h < h_min and span - tau > h_min:
            nrm = _fro(y)
            if nrm >= 1e-3 * thr:
                # step control gave up just short of the threshold: a blow-up at
                # local time scale |y| / |y'|, not stiffness
                reach = min(span, tau + 2.0 * nrm / max(_fro(f), 1e-300) + h_min)
                return taus, ys, fs, (tau, reach), max_norm, nfev
            raise IntegrationError(
                f"stiffness/escape: step size underflow at tau ~ {tau:.12g} "
                f"(norm {_fro(y):.3g})", bracket=(tau, tau + h_min))
        with np.errstate(over="ignore", invalid="ignore"):
            y_new, err, f_new = _dp_step(gg, tau, y, f, h)
        steps += 1
        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(err))):
            h *= 0.25
            continue
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        en = float(np.sqrt(np.mean((err / scale) ** 2)))
        if en > 1.0:
            h *= max(0.2, 0.9 * en ** -0.2)
            continue
        tau_new = span if span - (tau + h) <= 1e-14 * span else tau + h
        if project is not None:
            y_new = project(y_new)
            f_new = gg(tau_new, y_new)
        nrm = _fro(y_new)
        taus.append(tau_new)
        ys.append(y_new.copy())
        fs.append(f_new.copy())
        max_norm = max(max_norm, nrm)
        if nrm > thr:
            lo, hi = _bisect_crossing(gg, tau, y, f, tau_new, policy, project, h_min)
            return taus, ys, fs, (lo, hi), max_norm, nfev
        tau, y, f = tau_new, y_new, f_new
        fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
        h = min(h * fac, h_max)
    return taus, ys, fs, None, max_norm, nfev


def _bisect_crossing(g, tau_a, y_a, f_a, tau_b, policy, project, h_min):
    """Narrow ``[tau_a, tau_b]`` around the norm crossing of ``norm_escape``."""
    thr = policy.norm_escape
    sub = replace(policy, norm_escape=math.inf, max_steps=20_000)
    lo, hi = tau_a, tau_b
    target = 10 * h_min
    for _ in range(200):
        if hi - lo <= target:
            break
        mid = 0.5 * (lo + hi)
        try:
            _, ys, _, _, _, _ = _march(
                lambda s, y: g(tau_a + s, y), y_a, mid - tau_a, sub, project)
            beyond = (not np.all(np.isfinite(ys[-1]))) or _fro(ys[-1]) > thr
        except IntegrationError:
            beyond = True
        if beyond:
            hi = mid
        else:
            lo = mid
    return lo, hi


def integrate(rhs: Callable, y0, t_start: float, t_end: float,
              policy: GridPolicy = DEFAULT_POLICY,
              project: Callable = None) -> OdeResult:
    """Integrate ``dy/dt = rhs(t, y)`` from ``t_start`` to ``t_end``.

    ``y0`` may be any array shape; ``rhs`` receives and returns that shape.
    ``project`` (optional) maps an accepted state onto a constraint set, e.g.
    symmetrization. The returned path is always ordered by increasing ``t``.
    """
    y0 = np.asarray(y0, dtype=float)
    shape = y0.shape
    d = 1.0 if t_end >= t_start else -1.0
    span = abs(t_end - t_start)
    if span == 0:
        raise ValueError("empty integration interval")

    def g(tau, y):
        return d * np.asarray(rhs(t_start + d * tau, y.reshape(shape)), dtype=float).ravel()

    proj = None
    if project is not None:
        def proj(y):
            return np.asarray(project(y.reshape(shape)), dtype=float).ravel()

    taus, ys, fs, bracket, max_norm, nfev = _march(g, y0.ravel(), span, policy, proj)
    taus = np.asarray(taus)
    ys = np.asarray(ys)
    fs = d * np.asarray(fs)
    t = t_start + d * taus
    if d < 0:
        t, ys, fs = t[::-1], ys[::-1], fs[::-1]
    pshape = shape if len(shape) == 2 else (shape + (1,) if len(shape) == 1 else (1, 1))
    path = MatrixPath(TimeGrid(t, policy.kind), ys.reshape((-1,) + pshape),
                      fs.reshape((-1,) + pshape))
    escape = None
    if bracket is not None:
        a, b = t_start + d * bracket[0], t_start + d * bracket[1]
        escape = EscapeReport(float(min(a, b)), float(max(a, b)), float(max_norm), path)
    return OdeResult(path, escape, nfev, max_norm)


def integrate_backward(rhs: Callable, terminal, T: float, t0: float = 0.0,
                       policy: GridPolicy = DEFAULT_POLICY,
                       project: Callable = None) -> OdeResult:
    """Integrate from the terminal value at ``T`` back to ``t0``."""
    return integrate(rhs, terminal, T, t0, policy, project)


def integrate_forward(rhs: Callable, initial, t0: float, t1: float,
                      policy: GridPolicy = DEFAULT_POLICY,
                      project: Callable = None) -> OdeResult:
    return integrate(rhs, initial, t0, t1, policy, project)
