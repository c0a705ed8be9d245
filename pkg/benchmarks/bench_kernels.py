"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Times the Euler-Maruyama ensemble and the contraction-constant quadrature
(scalar Example 2 and two-dimensional Example 5), checks that both backends
agree, and prints a table.
"""

import argparse
import time

import numpy as np

from lqmfg import _kernels_py
from lqmfg.config import load_example
from lqmfg.nplayer import solve_reduced
from lqmfg.simulate import InitialLaw, StrategyProfile
from lqmfg.tpbv import _kappa_on_grid
from lqmfg.riccati import solve_lambda1

try:
    from lqmfg import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _best(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def em_case(N=40, paths=200, steps=2000):
    m = load_example("ex2").model
    t = np.linspace(0.0, m.T, steps + 1)
    Ks, Ko, kk = StrategyProfile.exact_nash(m, solve_reduced(m, N)).coefficients(t)
    B = m.B
    law = InitialLaw(np.ones(1))
    args = (m.A + B @ (Ks - Ko), B @ Ko + m.G / N, kk @ B.T, Ks, Ko, kk, m.D,
            law.means(N, 1), law.chol(1), m.T / steps, paths, 20240611,
            np.arange(N, dtype=np.uint32), m.Q, m.R, m.Gamma, m.eta, m.Qf, m.Gammaf, m.etaf)
    return lambda mod: (lambda: mod.em_ensemble(*args)), f"em_ensemble N={N} paths={paths} steps={steps}"


def kappa_case(example="ex2", nodes=801):
    import lqmfg.tpbv as tp
    m = load_example(example).model
    l1 = solve_lambda1(m)
    captured = {}
    saved = tp.kernels.kappa_profile
    tp.kernels.kappa_profile = lambda *a: captured.setdefault("args", a) and saved(*a)
    try:
        _kappa_on_grid(m, l1, nodes, tp.TIGHT_POLICY)
    finally:
        tp.kernels.kappa_profile = saved
    args = captured["args"]
    return lambda mod: (lambda: mod.kappa_profile(*args)), f"kappa_profile n={m.n} nodes={nodes}"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not available; only the numpy backend can be timed")
    print(f"{'kernel':45s} {'numpy [s]':>10s} {'cython [s]':>11s} {'speedup':>8s} {'max diff':>10s}")
    for make, label in (em_case(), kappa_case("ex2", 801), kappa_case("ex5", 201)):
        tp, out_p = _best(make(_kernels_py), args.repeat)
        if _ckernels is None:
            print(f"{label:45s} {tp:10.3f}")
            continue
        tc, out_c = _best(make(_ckernels), args.repeat)
        a = out_p if isinstance(out_p, tuple) else (out_p,)
        b = out_c if isinstance(out_c, tuple) else (out_c,)
        diff = max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in zip(a, b))
        print(f"{label:45s} {tp:10.3f} {tc:11.3f} {tp / tc:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
