"""Problem data for the linear-quadratic mean field game.

A :class:`GameModel` carries every constant coefficient of the N-player game:
state dynamics ``dX_i = (A X_i + B u_i + G X^(N)) dt + D dW_i`` and the
quadratic tracking cost with weights ``Q``, ``R``, ``Qf``, coupling matrices
``Gamma``, ``Gammaf`` and offsets ``eta``, ``etaf`` over the horizon ``[0, T]``.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "GameModel",
    "ControlWeight",
    "ScalarHatParams",
    "ModelError",
    "Violation",
    "validate",
    "control_weight",
    "scalar_hat_params",
    "lambda1_inf_scalar",
    "TOL_PSD",
    "TOL_PD",
]

TOL_PSD = 1e-10
TOL_PD = 1e-12
_ASYM_TOL = 1e-8


class ModelError(ValueError):
    """Raised when model data cannot be used for the requested operation."""


@dataclass(frozen=True)
class Violation:
    """One violated admissibility condition."""

    field: str
    message: str
    value: Optional[float] = None

    def __str__(self):
        if self.value is None:
            return f"{self.field}: {self.message}"
        return f"{self.field}: {self.message} (value {self.value:.6g})"


def _as_matrix(x, name):
    a = np.array(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        raise ModelError(f"{name} must be a matrix (nested list), got a flat vector")
    if a.ndim != 2:
        raise ModelError(f"{name} must be two-dimensional")
    return a


def _as_vector(x, name):
    a = np.array(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.ndim == 2 and 1 in a.shape:
        a = a.reshape(-1)
    if a.ndim != 1:
        raise ModelError(f"{name} must be a vector")
    return a


def _symmetrize(a, name):
    if a.shape[0] != a.shape[1]:
        return a
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > _ASYM_TOL * scale:
        raise ModelError(f"{name} is not symmetric")
    return 0.5 * (a + a.T)


@dataclass(frozen=True, eq=False)
class GameModel:
    """Constant coefficients of the LQ mean field game.

    Matrices may be given as nested lists or scalars (scalars become 1x1).
    ``Q``, ``R`` and ``Qf`` are symmetrized on construction; an asymmetry above
    ``1e-8`` (relative) is rejected. Dimensions are derived from ``A``, ``B``
    and ``D``. Omitted optional fields default to zero of the right shape.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    T: float
    G: np.ndarray = None
    D: np.ndarray = None
    Gamma: np.ndarray = None
    eta: np.ndarray = None
    Qf: np.ndarray = None
    Gammaf: np.ndarray = None
    etaf: np.ndarray = None
    n: int = field(init=False)
    n1: int = field(init=False)
    n2: int = field(init=False)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        n = A.shape[0]
        zeros = np.zeros((n, n))

        def mat(name, default):
            v = getattr(self, name)
            return default.copy() if v is None else _as_matrix(v, name)

        def vec(name):
            v = getattr(self, name)
            return np.zeros(n) if v is None else _as_vector(v, name)

        B = _as_matrix(self.B, "B")
        D = mat("D", np.zeros((n, 1)))
        values = dict(
            A=A,
            B=B,
            Q=_symmetrize(_as_matrix(self.Q, "Q"), "Q"),
            R=_symmetrize(_as_matrix(self.R, "R"), "R"),
            G=mat("G", zeros),
            D=D,
            Gamma=mat("Gamma", zeros),
            eta=vec("eta"),
            Qf=_symmetrize(mat("Qf", zeros), "Qf"),
            Gammaf=mat("Gammaf", zeros),
            etaf=vec("etaf"),
        )
        for k, v in values.items():
            v.setflags(write=False)
            object.__setattr__(self, k, v)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "n1", B.shape[1])
        object.__setattr__(self, "n2", D.shape[1])
        self._check_shapes()

    def _check_shapes(self):
        n, n1 = self.n, self.n1
        expect = {
            "A": (n, n),
            "B": (n, n1),
            "G": (n, n),
            "Q": (n, n),
            "R": (n1, n1),
            "Gamma": (n, n),
            "Qf": (n, n),
            "Gammaf": (n, n),
            "eta": (n,),
            "etaf": (n,),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ModelError(f"{name} has shape {got}, expected {shape}")
        if self.D.shape[0] != n:
            raise ModelError(f"D has {self.D.shape[0]} rows, expected {n}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ModelError(f"horizon T must be positive and finite, got {self.T}")

    def replace(self, **changes) -> "GameModel":
        """Return a copy with some fields replaced."""
        kw = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.init}
        kw.update(changes)
        return GameModel(**kw)

    def to_dict(self) -> dict:
        """Plain-Python representation (nested lists, row-major)."""
        out = {}
        for f in dataclasses.fields(self):
            if not f.init:
                continue
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GameModel":
        known = {f.name for f in dataclasses.fields(cls) if f.init}
        unknown = set(data) - known
        if unknown:
            raise ModelError(f"unknown model keys: {sorted(unknown)}")
        missing = {"A", "B", "Q", "R", "T"} - set(data)
        if missing:
            raise ModelError(f"missing model keys: {sorted(missing)}")
        return cls(**data)

    def __eq__(self, other):
        if not isinstance(other, GameModel):
            return NotImplemented
        a, b = self.to_dict(), other.to_dict()
        return a == b

    __hash__ = None


@dataclass(frozen=True)
class ControlWeight:
    """``M = B R^{-1} B^T``."""

    M: np.ndarray


def validate(model: GameModel) -> list[Violation]:
    """List every violated admissibility condition; empty means admissible.

    Semi-definiteness of ``Q`` and ``Qf`` is checked against ``-TOL_PSD`` on the
    smallest eigenvalue, definiteness of ``R`` against ``+TOL_PD``.
    """
    out = []
    for name in ("Q", "Qf"):
        lam = float(np.linalg.eigvalsh(getattr(model, name)).min())
        if lam < -TOL_PSD:
            out.append(Violation(name, "not positive semi-definite", lam))
    lam = float(np.linalg.eigvalsh(model.R).min())
    if lam < TOL_PD:
        out.append(Violation("R", "R not positive definite", lam))
    for name in ("A", "B", "G", "D", "Q", "R", "Gamma", "eta", "Qf", "Gammaf", "etaf"):
        if not np.all(np.isfinite(getattr(model, name))):
            out.append(Violation(name, "contains non-finite entries"))
    if not np.any(model.B):
        warnings.warn("B = 0: the game has no control authority", stacklevel=2)
    return out


def control_weight(model: GameModel) -> ControlWeight:
    try:
        c = np.linalg.cond(model.R)
        if not np.isfinite(c) or c > 1e14:
            raise np.linalg.LinAlgError
        RinvBt = np.linalg.solve(model.R, model.B.T)
    except np.linalg.LinAlgError:
        raise ModelError("R not invertible") from None
    M = model.B @ RinvBt
    M = 0.5 * (M + M.T)
    M.setflags(write=False)
    return ControlWeight(M)


def lambda1_inf_scalar(A: float, Q: float) -> float:
    """Stabilizing root ``A + sqrt(A^2 + Q)`` of the scalar ARE with ``M = 1``."""
    return A + math.sqrt(A * A + Q)


@dataclass(frozen=True)
class ScalarHatParams:
    """Derived constants of the scalar model normalized to ``M = 1``.

    ``a_hat`` and ``Q_hat`` are the coefficients of the constant-coefficient
    Riccati equation ``L' = 2 a_hat L + L^2 + Q_hat`` obtained when
    ``Qf = A + sqrt(A^2 + Q)``. ``Delta_hat = a_hat^2 - Q_hat``. ``alpha``, ``beta`` and ``theta`` are ``None``
    outside the regime where they are defined.
    """

    A: float
    G: float
    Q: float
    Gamma: float
    a_hat: float
    Q_hat: float
    Delta_hat: float
    alpha: Optional[float]
    beta: Optional[float]
    theta: Optional[float]
    lambda_hat_1: Optional[float]
    lambda_hat_2: Optional[float]
    c1: Optional[float]
    c2: Optional[float]
    lambda_1: Optional[float]
    lambda_2: Optional[float]
    lambda1_inf: float


def scalar_hat_params(model: GameModel) -> ScalarHatParams:
    if model.n != 1 or model.n1 != 1:
        raise ModelError("scalar normalization violated: n = n1 = 1 required")
    M = control_weight(model).M[0, 0]
    if abs(M - 1.0) > 1e-12:
        raise ModelError(f"scalar normalization violated: M = {M!r}, expected 1")
    A, G, Q, Gm = (float(getattr(model, k)[0, 0]) for k in ("A", "G", "Q", "Gamma"))
    root = math.sqrt(A * A + Q)
    a_hat = root - G / 2
    Q_hat = Q * Gm - (A + root) * G
    # Same quantity as a_hat**2 - Q_hat, written without the cancellation.
    Delta_hat = 0.25 * (2 * A + G) ** 2 + Q * (1 - Gm)
    alpha = beta = theta = None
    lh1 = lh2 = c1 = c2 = l1 = l2 = None
    if Delta_hat >= 0:
        s = math.sqrt(Delta_hat)
        c1, c2 = -a_hat - s, -a_hat + s
        l1, l2 = G / 2 + s, G / 2 - s
        if Delta_hat > 0:
            alpha = s
            lh1, lh2 = a_hat + s, a_hat - s
    if Delta_hat < 0:
        beta = math.sqrt(-Delta_hat)
        theta = math.atan2(beta, a_hat)
    return ScalarHatParams(
        A=A, G=G, Q=Q, Gamma=Gm,
        a_hat=a_hat, Q_hat=Q_hat, Delta_hat=Delta_hat,
        alpha=alpha, beta=beta, theta=theta,
        lambda_hat_1=lh1, lambda_hat_2=lh2,
        c1=c1, c2=c2, lambda_1=l1, lambda_2=l2,
        lambda1_inf=A + root,
    )
