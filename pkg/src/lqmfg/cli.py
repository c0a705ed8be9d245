"""Command-line runner.

    lqmfg <task> --config FILE [--out DIR] [--seed U64] [--grid coarse|default|fine]
    lqmfg reproduce EXAMPLE [--out DIR]

Every run writes ``summary.json`` plus task CSVs into the output directory.
Exit codes: 0 ok, 2 invalid config, 3 solvability required but the
non-symmetric Riccati equation escaped, 4 numerical failure, 5 reproduction
mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace
from typing import Optional

import numpy as np

from . import kernels
from .config import (ConfigError, EXAMPLES, ScenarioConfig, TASKS, load_config,
                     load_example, normalize_example_id)
from .integrate import POLICIES, FiniteEscapeError, IntegrationError, integrate
from .model import ModelError, scalar_hat_params, validate
from .nare import (build_A_infinity, limiting_offset, local_stability_probe, solve_are,
                   spectral_split, stabilizing_solution)
from .nplayer import fit_loglog_slope, rate_study, solve_reduced
from .riccati import (check_asymptotic_solvability, escape_time_scalar, lambda2_ode,
                      solve_lambda1, solve_limit)
from .simulate import InitialLaw, SimConfig, StrategyProfile, simulate_ensemble
from .tpbv import (build_nonuniqueness_instance, classify, consistency_with_direct,
                   contraction_kappa0, find_hat_T, find_hat_T_numeric,
                   fundamental_matrix, tpbv_generator, write_solution_csv)

__all__ = ["main", "run", "reproduce", "EXIT_OK", "EXIT_CONFIG", "EXIT_ESCAPE",
           "EXIT_NUMERIC", "EXIT_MISMATCH"]

EXIT_OK, EXIT_CONFIG, EXIT_ESCAPE, EXIT_NUMERIC, EXIT_MISMATCH = 0, 2, 3, 4, 5


class _Escape(Exception):
    """Task needs a solvable limit system but the cross gain escaped."""


def _clean(x):
    # JSON has no NaN/inf; numpy scalars are not serializable
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _write_summary(out, summary):
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(_clean(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else repr(float(v)) for v in r])


# ------------------------------------------------------------------ tasks

def _task_check(cfg, policy, out, files):
    verdict = check_asymptotic_solvability(cfg.model, policy)
    l1 = solve_lambda1(cfg.model, policy)
    path = lambda2_ode(cfg.model, l1, policy).path
    f = os.path.join(out, "lambda2.csv")
    path.to_csv(f, "lambda2")
    files.append(f)
    d = verdict.to_dict()
    d["verdict"] = "solvable" if verdict.solvable else "not solvable"
    return d


def _limit(cfg, policy):
    try:
        return solve_limit(cfg.model, cfg.x0, policy)
    except FiniteEscapeError as exc:
        raise _Escape(str(exc)) from None


def _task_limit(cfg, policy, out, files):
    lim = _limit(cfg, policy)
    for name in ("lambda1", "lambda2", "lambda3", "chi1", "chi2", "xbar"):
        f = os.path.join(out, f"{name}.csv")
        getattr(lim, name).to_csv(f, name)
        files.append(f)
    return {
        "verdict": "solvable",
        "lambda1_0": lim.lambda1(0.0),
        "lambda2_0": lim.lambda2(0.0),
        "lambda3_0": lim.lambda3(0.0),
        "chi1_0": lim.chi1(0.0)[:, 0],
        "chi2_0": float(lim.chi2(0.0).ravel()[0]),
        "xbar_T": lim.xbar(cfg.model.T)[:, 0],
        "grid_nodes": len(lim.lambda1.grid),
    }


def _task_finite_n(cfg, policy, out, files):
    lim = _limit(cfg, policy)
    rep = rate_study(cfg.model, cfg.Ns, policy, lim)
    f = os.path.join(out, "rate_study.csv")
    rep.to_csv(f)
    files.append(f)
    return rep.to_dict()


def _task_tpbv(cfg, policy, out, files):
    m = cfg.model
    x0 = np.zeros(m.n) if cfg.x0 is None else cfg.x0
    l1 = solve_lambda1(m, policy)
    outcome = classify(m, fundamental_matrix(m, l1), x0, l1)
    d = outcome.to_dict()
    if outcome.verdict == "unique":
        f = os.path.join(out, "tpbv_solution.csv")
        write_solution_csv(f, outcome.xbar, outcome.s)
        files.append(f)
        if check_asymptotic_solvability(m, policy).solvable:
            lim = solve_limit(m, x0, policy)
            d["consistency_with_direct"] = consistency_with_direct(m, lim, outcome).to_dict()
    return d


def _task_kappa(cfg, policy, out, files):
    est = contraction_kappa0(cfg.model, nodes=cfg.kappa_nodes)
    t = np.linspace(0.0, cfg.model.T, est.nodes)
    f = os.path.join(out, "kappa_profile.csv")
    _write_rows(f, ["t", "kappa"], zip(t, est.profile))
    files.append(f)
    d = est.to_dict()
    d["contraction"] = est.kappa0 < 1
    return d


def _nare_summary(model, delta=None, horizon=10.0):
    are = solve_are(model, crosscheck=True)
    res = stabilizing_solution(model, are)
    d = res.to_dict()
    d["lambda1_inf"] = are.lambda1_inf
    d["are_residual"] = are.residual
    d["are_integration_gap"] = are.integration_gap
    if res.verdict == "stabilizing_solution":
        d["chi1_inf"] = limiting_offset(model, res)
        if delta is not None:
            probe = local_stability_probe(model, res, delta, horizon)
            d["probe"] = {"delta": delta, "horizon": horizon, "initial_distance": probe.distance[0],
                          "final_distance": probe.distance[-1], "decayed": probe.decayed,
                          "predicted_rate": probe.predicted_rate}
    return d, res


def _task_nare(cfg, policy, out, files):
    d, res = _nare_summary(cfg.model, cfg.probe_delta, cfg.probe_horizon)
    f = os.path.join(out, "nare_eigenvalues.csv")
    _write_rows(f, ["re", "im"], [(z.real, z.imag) for z in res.split.eigenvalues])
    files.append(f)
    return d


def _task_simulate(cfg, policy, out, files):
    m, s = cfg.model, cfg.sim
    mean0 = s.initial_mean if s.initial_mean is not None else (
        cfg.x0 if cfg.x0 is not None else np.zeros(m.n))
    law = InitialLaw(np.asarray(mean0, dtype=float), None if s.initial_cov is None
                     else np.asarray(s.initial_cov, dtype=float))
    x0 = np.atleast_1d(np.asarray(mean0, dtype=float))
    if x0.ndim > 1:
        x0 = x0.mean(axis=0)
    xbar = lim = None
    if check_asymptotic_solvability(m, policy).solvable:
        lim = solve_limit(m, x0, policy)
        xbar = lim.xbar
    elif s.profile == "direct_decentralized":
        raise _Escape("decentralized profile needs a solvable limit system")
    if s.profile == "fixed_point":
        l1 = solve_lambda1(m, policy)
        oc = classify(m, fundamental_matrix(m, l1), x0, l1)
        if oc.verdict != "unique":
            raise ModelError(f"fixed-point profile needs a unique boundary value solution, got {oc.verdict}")
        xbar = oc.xbar
    runs = []
    for N in s.Ns:
        if s.profile == "exact_nash":
            prof = StrategyProfile.exact_nash(m, solve_reduced(m, N, policy))
        elif s.profile == "direct_decentralized":
            prof = StrategyProfile.direct_decentralized(m, lim)
        else:
            prof = StrategyProfile.fixed_point(m, l1, oc.s)
        st = simulate_ensemble(m, SimConfig(N, s.paths, s.seed, law, s.dt), prof, xbar)
        f = os.path.join(out, f"simulate_N{N}.csv")
        st.to_csv(f)
        files.append(f)
        runs.append(st.to_dict())
    d = {"profile": s.profile, "runs": runs}
    if len(runs) >= 2 and xbar is not None:
        d["mse_slope"] = fit_loglog_slope([r["N"] for r in runs], [r["mse_vs_xbar"] for r in runs])
    return d


_TASKS = {
    "check": _task_check,
    "limit": _task_limit,
    "finite-n": _task_finite_n,
    "tpbv": _task_tpbv,
    "kappa": _task_kappa,
    "nare": _task_nare,
    "simulate": _task_simulate,
}


def run(cfg: ScenarioConfig, task: str, out: str, seed: Optional[int] = None,
        grid: Optional[str] = None) -> int:
    """Execute one task; returns the process exit code."""
    os.makedirs(out, exist_ok=True)
    summary = {"task": task, "backend": kernels.BACKEND}
    files: list = []
    try:
        cfg.require(task)
        if task == "reproduce":
            if cfg.example is None:
                raise ConfigError("reproduce needs an example id")
            return reproduce(cfg.example, out)
        if seed is not None and cfg.sim is not None:
            cfg = replace(cfg, sim=replace(cfg.sim, seed=seed))
        grid = grid or cfg.grid
        violations = validate(cfg.model)
        if violations:
            summary["violations"] = [str(v) for v in violations]
            raise ConfigError("model violates admissibility: " + "; ".join(summary["violations"]))
        summary["grid"] = grid
        summary["result"] = _TASKS[task](cfg, POLICIES[grid], out, files)
        code = EXIT_OK
    except _Escape as exc:
        summary["error"] = str(exc)
        code = EXIT_ESCAPE
    except (ConfigError, ModelError) as exc:
        summary["error"] = str(exc)
        code = EXIT_CONFIG
    except (IntegrationError, FiniteEscapeError, np.linalg.LinAlgError, FloatingPointError,
            ValueError) as exc:
        summary["error"] = f"{type(exc).__name__}: {exc}"
        code = EXIT_NUMERIC
    summary["exit_code"] = code
    summary["csv"] = [os.path.basename(f) for f in files]
    _write_summary(out, summary)
    if code:
        print(f"lqmfg {task}: {summary['error']}", file=sys.stderr)
    return code


# ------------------------------------------------------------------ reproduction

def _row(name, computed, reference, tol, relative=False, passed=None):
    if passed is None:
        err = abs(computed - reference)
        if relative:
            err /= abs(reference)
        passed = bool(err <= tol)
    return {"quantity": name, "computed": computed, "reference": reference,
            "tolerance": tol, "relative": relative, "pass": passed}


def _flag(name, computed, reference):
    return {"quantity": name, "computed": computed, "reference": reference,
            "tolerance": None, "relative": False, "pass": computed == reference}


def _eig_rows(prefix, eigs, reference, tol=1e-4):
    rows = []
    ev = sorted(eigs, key=lambda z: (round(z.real, 6), z.imag))
    ref = sorted(reference, key=lambda z: (round(z.real, 6), z.imag))
    for k, (a, b) in enumerate(zip(ev, ref)):
        rows.append(_row(f"{prefix}[{k}].re", a.real, b.real, tol))
        rows.append(_row(f"{prefix}[{k}].im", a.imag, b.imag, tol))
    return rows


def _rep_ex2(cfg, out, files):
    rows = []
    for T in (1.0, 3.0, 10.0, 50.0):
        v = check_asymptotic_solvability(cfg.model.replace(T=T))
        rows.append(_flag(f"solvable(T={T:g})", v.solvable, True))
    return rows


def _rep_ex3(cfg, out, files):
    m = cfg.model
    v = check_asymptotic_solvability(m)
    rows = [_flag("solvable", v.solvable, False)]
    inside = v.escape_time_estimate is not None and 0.0 <= v.escape_time_estimate < m.T
    rows.append(_flag("escape inside [0, T)", inside, True))
    l1 = solve_lambda1(m)
    path = lambda2_ode(m, l1).path
    f = os.path.join(out, "lambda2_blowup.csv")
    _write_rows(f, ["t", "lambda1", "lambda2"],
                [(t, l1(t)[0, 0], y[0, 0]) for t, y in zip(path.t, path.values)])
    files.append(f)
    return rows


def _phi_curve_csv(model, out, files, T_max=40.0, points=801):
    m = model.replace(T=T_max)
    l1 = solve_lambda1(m)
    gen = tpbv_generator(m, l1)
    n = m.n
    fwd = integrate(lambda t, P: gen(t) @ P, np.eye(2 * n), 0.0, T_max,
                    replace(POLICIES["fine"], norm_escape=math.inf)).path
    t = np.linspace(0.0, T_max, points)
    vals = fwd(t)
    f = os.path.join(out, "phi21_phi22_vs_T.csv")
    _write_rows(f, ["T", "phi21", "phi22"], zip(t, vals[:, n, 0], vals[:, n, n]))
    files.append(f)


def _rep_ex4(cfg, out, files):
    m = cfg.model
    p = scalar_hat_params(m)
    T_hat = find_hat_T(p)
    rows = [
        _row("a_hat", p.a_hat, -0.046447, 1e-4, relative=True),
        _row("Q_hat", p.Q_hat, 4.906209e-4, 1e-4, relative=True),
        _row("a_hat^2", p.a_hat ** 2, 0.002157, 1e-3, relative=True),
        _row("Delta_hat", p.Delta_hat, 0.001667, 1e-3, relative=True),
        _row("c1", p.c1, 0.005622, 1e-4, relative=True),
        _row("c2", p.c2, 0.087271, 1e-4, relative=True),
        _row("T_check", T_hat, 33.587095, 1e-4, relative=True),
        _row("T_hat (Phi22 root)", find_hat_T_numeric(m, 40.0), 33.587095, 1e-4, relative=True),
    ]
    v = check_asymptotic_solvability(m)
    rows.append(_flag("solvable", v.solvable, False))
    est = v.escape_time_estimate if v.escape_time_estimate is not None else math.nan
    rows.append(_row("escape time", est, 1.4129, 5e-3))
    rows.append(_row("escape time vs T - T_check", est, escape_time_scalar(p, m.T), 1e-6))
    x0 = cfg.x0 if cfg.x0 is not None else np.zeros(1)
    oc = classify(m, fundamental_matrix(m, solve_lambda1(m)), x0)
    rows.append(_flag("TPBV verdict at T=35", oc.verdict, "unique"))
    _phi_curve_csv(m, out, files)
    return rows


def _rep_nonuniq(cfg, out, files):
    inst = build_nonuniqueness_instance(cfg.model, s0_witnesses=(-1.0, 0.0, 1.0, 2.0))
    rows = [
        _row("T_hat", inst.T_hat, 33.587095, 1e-6),
        _row("x0_hat", inst.x0_hat, -0.394732, 1e-6),
        _row("x0_hat vs config", inst.x0_hat, float(cfg.x0[0]), 1e-8) if cfg.x0 is not None else None,
        _row("|Phi22(T_hat,0)| / scale", inst.phi22_relative, 0.0, 1e-8),
        _flag("TPBV verdict", inst.outcome.verdict, "infinite"),
        _flag("witness solutions >= 3", len(inst.witnesses) >= 3, True),
        _row("max terminal residual", max(inst.terminal_residuals), 0.0, 1e-6),
    ]
    for k, (xb, s) in enumerate(inst.paths):
        f = os.path.join(out, f"nonuniq_witness_{k}.csv")
        write_solution_csv(f, xb, s)
        files.append(f)
    return [r for r in rows if r is not None]


_EX5_L2 = [[16.238985, 4.099679], [4.132523, 1.570208]]
_EX5_EIG = [complex(-1.022350, 0.730733), complex(-1.022350, -0.730733),
            complex(2.022350, 0.707903), complex(2.022350, -0.707903)]
_EX5_BASIS = [[-0.167388, -0.161703], [0.448957, 0.742511],
              [-0.877636, 0.418170], [0.013220, 0.497657]]
_EX6_EIG = [complex(-1.090328, 0.762501), complex(-1.090328, -0.762501),
            complex(-0.109672, 0.692413), complex(-0.109672, -0.692413)]


def _subspace_gap(U, V) -> float:
    # distance between orthogonal projectors onto the two column spans
    Pu = U @ np.linalg.pinv(U)
    Pv = V @ np.linalg.pinv(V)
    return float(np.linalg.norm(Pu - Pv, 2))


def _rep_ex5(cfg, out, files):
    d, res = _nare_summary(cfg.model, cfg.probe_delta, cfg.probe_horizon)
    rows = [_flag("verdict", res.verdict, "stabilizing_solution")]
    if res.lambda2_inf is not None:
        for i in range(2):
            for j in range(2):
                rows.append(_row(f"lambda2_inf[{i},{j}]", res.lambda2_inf[i, j], _EX5_L2[i][j], 1e-4))
        rows.append(_row("stable subspace vs displayed basis",
                         _subspace_gap(res.split.U, np.array(_EX5_BASIS)), 0.0, 1e-5))
    rows += _eig_rows("eig", res.split.eigenvalues, _EX5_EIG)
    f = os.path.join(out, "ex5_lambda2_inf.csv")
    if res.lambda2_inf is not None:
        _write_rows(f, ["row", "col1", "col2"], [(str(i + 1), *res.lambda2_inf[i]) for i in range(2)])
        files.append(f)
    return rows


def _rep_ex6(cfg, out, files):
    are = solve_are(cfg.model)
    split = spectral_split(build_A_infinity(cfg.model, are))
    res = stabilizing_solution(cfg.model, are, split)
    rows = [_flag("verdict", res.verdict, "no_splitting"),
            _flag("stable eigenvalue count", split.n_stable, 4)]
    return rows + _eig_rows("eig", split.eigenvalues, _EX6_EIG)


_REPRO = {"ex2": _rep_ex2, "ex3": _rep_ex3, "ex4": _rep_ex4, "nonuniq": _rep_nonuniq,
          "ex5": _rep_ex5, "ex6": _rep_ex6}


def reproduce(example_id: str, out: str, cfg: ScenarioConfig = None) -> int:
    """Run a built-in example, write the comparison table, return the exit code."""
    os.makedirs(out, exist_ok=True)
    key = normalize_example_id(example_id)
    cfg = cfg or load_example(key)
    files: list = []
    summary = {"task": "reproduce", "example": key, "backend": kernels.BACKEND}
    try:
        rows = _REPRO[key](cfg, out, files)
    except (IntegrationError, FiniteEscapeError, np.linalg.LinAlgError, ValueError) as exc:
        summary.update(error=f"{type(exc).__name__}: {exc}", exit_code=EXIT_NUMERIC, csv=[])
        _write_summary(out, summary)
        print(f"lqmfg reproduce {key}: {summary['error']}", file=sys.stderr)
        return EXIT_NUMERIC
    f = os.path.join(out, f"{key}_comparison.csv")
    with open(f, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "computed", "reference", "tolerance", "pass"])
        for r in rows:
            w.writerow([r["quantity"], r["computed"], r["reference"], r["tolerance"], r["pass"]])
    files.insert(0, f)
    for r in rows:
        mark = "PASS" if r["pass"] else "FAIL"
        print(f"{mark}  {r['quantity']}: computed {r['computed']!r}, reference {r['reference']!r}")
    ok = all(r["pass"] for r in rows)
    code = EXIT_OK if ok else EXIT_MISMATCH
    summary.update(rows=rows, passed=ok, exit_code=code, csv=[os.path.basename(x) for x in files])
    _write_summary(out, summary)
    return code


# ------------------------------------------------------------------ entry point

def _parser():
    p = argparse.ArgumentParser(prog="lqmfg", description="LQ mean field game solvers")
    p.add_argument("task", choices=TASKS)
    p.add_argument("example", nargs="?", help="example id for 'reproduce' (" + ", ".join(EXAMPLES) + ")")
    p.add_argument("--config", help="scenario JSON file")
    p.add_argument("--out", default="lqmfg_out", help="output directory (default: lqmfg_out)")
    p.add_argument("--seed", type=int, help="override the simulation seed")
    p.add_argument("--grid", choices=sorted(POLICIES), help="integration accuracy policy")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.task == "reproduce":
            if args.example is not None:
                cfg = load_config(args.config) if args.config else None
                return reproduce(args.example, args.out, cfg)
            if not args.config:
                raise ConfigError("reproduce needs an example id or --config")
        elif args.example is not None:
            raise ConfigError(f"unexpected argument {args.example!r}")
        if not args.config:
            raise ConfigError("--config is required")
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"lqmfg: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.task == "reproduce":
        if cfg.example is None:
            print("lqmfg: reproduce config has no 'example' key", file=sys.stderr)
            return EXIT_CONFIG
        return reproduce(cfg.example, args.out, cfg)
    return run(cfg, args.task, args.out, args.seed, args.grid)


if __name__ == "__main__":
    sys.exit(main())
