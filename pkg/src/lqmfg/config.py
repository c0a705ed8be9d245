"""Scenario configuration files.

A scenario is one JSON document::

    {
      "model": {"A": [[0.2]], "B": [[1]], "Q": [[1]], "R": [[1]], "T": 3,
                "G": [[1]], "Gamma": [[1.2]], "Qf": "are"},
      "task": "limit",
      "x0": [1.0],
      "grid": "default",
      "finite_n": {"N": [10, 20, 40]},
      "simulation": {"N": [10, 40], "paths": 2000, "seed": 7, "dt": 0.0015,
                     "initial_mean": [1.0], "initial_cov": null,
                     "profile": "exact_nash"},
      "kappa": {"nodes": 401},
      "nare": {"probe_delta": 1e-3, "probe_horizon": 10}
    }

Matrices are nested row-major lists; scalars are accepted for 1x1 entries.
``"Qf": "are"`` sets the terminal weight to the stabilizing solution of the
algebraic Riccati equation of the model. Unknown keys are rejected at every
level; only the sections used by the chosen task are required.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from .integrate import POLICIES
from .model import GameModel, ModelError

__all__ = [
    "ConfigError",
    "TASKS",
    "EXAMPLES",
    "SimSettings",
    "ScenarioConfig",
    "parse_config",
    "load_config",
    "load_example",
    "dump_model",
]

TASKS = ("check", "limit", "finite-n", "tpbv", "kappa", "nare", "simulate", "reproduce")
EXAMPLES = ("ex2", "ex3", "ex4", "nonuniq", "ex5", "ex6")
PROFILES = ("exact_nash", "direct_decentralized", "fixed_point")

_TOP_KEYS = {"model", "task", "x0", "grid", "finite_n", "simulation", "kappa", "nare", "example"}
_MODEL_KEYS = {"A", "B", "Q", "R", "T", "G", "D", "Gamma", "eta", "Qf", "Gammaf", "etaf"}
_SIM_KEYS = {"N", "paths", "seed", "dt", "initial_mean", "initial_cov", "profile"}


class ConfigError(ModelError):
    """Malformed or incomplete scenario file."""


@dataclass(frozen=True)
class SimSettings:
    Ns: tuple
    paths: int
    seed: int
    dt: Optional[float]
    initial_mean: Optional[list]
    initial_cov: Optional[list]
    profile: str = "exact_nash"


@dataclass(frozen=True)
class ScenarioConfig:
    model: GameModel
    task: Optional[str] = None
    x0: Optional[np.ndarray] = None
    grid: str = "default"
    Ns: tuple = ()
    sim: Optional[SimSettings] = None
    kappa_nodes: int = 401
    probe_delta: Optional[float] = None
    probe_horizon: float = 10.0
    example: Optional[str] = None
    qf_from_are: bool = field(default=False, repr=False)

    def require(self, task: str):
        """Raise :class:`ConfigError` unless the parameters for ``task`` are present."""
        if task not in TASKS:
            raise ConfigError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
        if self.task is not None and self.task != task:
            raise ConfigError(f"config is for task {self.task!r}, not {task!r}")
        if task == "finite-n" and len(self.Ns) < 2:
            raise ConfigError("finite-n needs finite_n.N with at least two population sizes")
        if task == "simulate" and self.sim is None:
            raise ConfigError("simulate needs a 'simulation' section")


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def _number(v, where, integer=False, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where} must be a number")
    if integer and not isinstance(v, int):
        raise ConfigError(f"{where} must be an integer")
    if not math.isfinite(v) or (positive and v <= 0):
        raise ConfigError(f"{where} must be {'positive and ' if positive else ''}finite")
    return v


def _model(d) -> tuple[GameModel, bool]:
    _check_keys(d, _MODEL_KEYS, "model")
    data = dict(d)
    from_are = isinstance(data.get("Qf"), str)
    if from_are:
        if data["Qf"] != "are":
            raise ConfigError("model.Qf must be a matrix or the string 'are'")
        data.pop("Qf")
    if "T" in data:
        _number(data["T"], "model.T", positive=True)
    try:
        m = GameModel.from_dict(data)
        if from_are:
            from .nare import solve_are
            m = m.replace(Qf=solve_are(m).lambda1_inf)
    except ConfigError:
        raise
    except (ModelError, ValueError, TypeError) as exc:
        raise ConfigError(f"model: {exc}") from None
    return m, from_are


def _int_list(v, where):
    vals = v if isinstance(v, list) else [v]
    if not vals:
        raise ConfigError(f"{where} must not be empty")
    return tuple(_number(x, where, integer=True, positive=True) for x in vals)


def parse_config(data: dict) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from a decoded JSON document."""
    _check_keys(data, _TOP_KEYS, "config")
    if "model" not in data:
        raise ConfigError("config has no 'model' section")
    model, from_are = _model(data["model"])
    kw = {"model": model, "qf_from_are": from_are}
    task = data.get("task")
    if task is not None and task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    kw["task"] = task
    if data.get("x0") is not None:
        x0 = np.atleast_1d(np.asarray(data["x0"], dtype=float)).ravel()
        if x0.shape != (model.n,) or not np.all(np.isfinite(x0)):
            raise ConfigError(f"x0 must be a finite vector of length {model.n}")
        kw["x0"] = x0
    grid = data.get("grid", "default")
    if grid not in POLICIES:
        raise ConfigError(f"grid must be one of {sorted(POLICIES)}")
    kw["grid"] = grid
    if "finite_n" in data:
        _check_keys(data["finite_n"], {"N"}, "finite_n")
        kw["Ns"] = _int_list(data["finite_n"].get("N", []), "finite_n.N")
    if "simulation" in data:
        s = data["simulation"]
        _check_keys(s, _SIM_KEYS, "simulation")
        for key in ("N", "paths", "seed"):
            if key not in s:
                raise ConfigError(f"simulation.{key} is required")
        seed = _number(s["seed"], "simulation.seed", integer=True)
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("simulation.seed must be an unsigned 64-bit integer")
        dt = s.get("dt")
        profile = s.get("profile", "exact_nash")
        if profile not in PROFILES:
            raise ConfigError(f"simulation.profile must be one of {PROFILES}")
        kw["sim"] = SimSettings(
            Ns=_int_list(s["N"], "simulation.N"),
            paths=_number(s["paths"], "simulation.paths", integer=True, positive=True),
            seed=seed,
            dt=None if dt is None else float(_number(dt, "simulation.dt", positive=True)),
            initial_mean=s.get("initial_mean"),
            initial_cov=s.get("initial_cov"),
            profile=profile,
        )
    if "kappa" in data:
        _check_keys(data["kappa"], {"nodes"}, "kappa")
        nodes = _number(data["kappa"].get("nodes", 401), "kappa.nodes", integer=True, positive=True)
        if nodes < 3 or nodes % 2 == 0:
            raise ConfigError("kappa.nodes must be odd and at least 3")
        kw["kappa_nodes"] = nodes
    if "nare" in data:
        _check_keys(data["nare"], {"probe_delta", "probe_horizon"}, "nare")
        if data["nare"].get("probe_delta") is not None:
            kw["probe_delta"] = float(_number(data["nare"]["probe_delta"], "nare.probe_delta", positive=True))
        kw["probe_horizon"] = float(_number(data["nare"].get("probe_horizon", 10.0),
                                            "nare.probe_horizon", positive=True))
    if data.get("example") is not None:
        if data["example"] not in EXAMPLES:
            raise ConfigError(f"example must be one of {EXAMPLES}")
        kw["example"] = data["example"]
    return ScenarioConfig(**kw)


def load_config(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(data)


def normalize_example_id(name: str) -> str:
    """Accept ``ex5``, ``example-5`` and ``example5``."""
    key = name.lower().replace("example", "ex").replace("-", "").replace("_", "")
    if key not in EXAMPLES:
        raise ConfigError(f"unknown example {name!r}; expected one of {', '.join(EXAMPLES)}")
    return key


def load_example(name: str) -> ScenarioConfig:
    """Shipped configuration of a built-in example."""
    key = normalize_example_id(name)
    text = resources.files("lqmfg").joinpath("data", f"{key}.json").read_text()
    return parse_config(json.loads(text))


def dump_model(model: GameModel) -> str:
    """JSON text of the model section; ``parse_config`` reads it back field-exactly."""
    return json.dumps(model.to_dict())
