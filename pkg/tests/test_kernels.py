import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lqmfg import _kernels_py, kernels

try:
    from lqmfg import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")


@pytest.mark.parametrize("m,h,expected", [
    (0, 1.0, [0.0]),
    (1, 2.0, [1.0, 1.0]),
    (2, 1.0, [1 / 3, 4 / 3, 1 / 3]),
    (3, 1.0, [3 / 8, 9 / 8, 9 / 8, 3 / 8]),
    (4, 1.0, [1 / 3, 4 / 3, 2 / 3, 4 / 3, 1 / 3]),
])
def test_simpson_weights_values(m, h, expected):
    assert np.allclose(_kernels_py.simpson_weights(m, h), expected, rtol=0, atol=1e-15)


@given(st.integers(1, 60), st.floats(0.01, 2.0))
def test_simpson_weights_integrate_cubics(m, h):
    w = _kernels_py.simpson_weights(m, h)
    x = h * np.arange(m + 1)
    L = h * m
    assert w.sum() == pytest.approx(L, rel=1e-13)
    if m >= 2:
        # Simpson and the 3/8 rule are exact for cubics
        assert w @ (x ** 3 - x) == pytest.approx(L ** 4 / 4 - L ** 2 / 2, rel=1e-12, abs=1e-12)


@needs_ext
@given(st.integers(0, 40), st.floats(0.01, 2.0))
def test_simpson_backends_agree(m, h):
    assert np.array_equal(np.asarray(_ckernels.simpson_weights(m, h)), _kernels_py.simpson_weights(m, h))


@needs_ext
@pytest.mark.parametrize("n", [1, 2])
def test_kappa_backends_agree(n):
    rng = np.random.default_rng(n)
    K = 21
    phi1, C, E = (rng.normal(size=(K, n, n)) for _ in range(3))
    F = rng.normal(size=(n, n))
    a = _kernels_py.kappa_profile(phi1, C, E, F, 0.05)
    b = np.asarray(_ckernels.kappa_profile(phi1, C, E, F, 0.05))
    assert np.allclose(a, b, rtol=1e-13, atol=1e-15)


def test_kappa_profile_against_direct_quadrature():
    # scalar constant integrands: inner integral is |c e| (T - tau), term |c f|
    K, h = 41, 0.025
    T = h * (K - 1)
    c, e, f = 1.5, -0.4, 2.0
    phi1 = np.ones((K, 1, 1))
    C = np.full((K, 1, 1), c)
    E = np.full((K, 1, 1), e)
    out = kernels.kappa_profile(phi1, C, E, np.array([[f]]), h)
    t = h * np.arange(K)
    exact = abs(c * e) * (T * t - t ** 2 / 2) + abs(c * f) * t
    assert np.allclose(out, exact, rtol=1e-12, atol=1e-14)


def _em_args(paths=8, K=50, N=3, D=0.4):
    n = 1
    one = np.ones((K + 1, n, n))
    eye = np.eye(n)
    return (-0.5 * one, 0.1 * one, np.zeros((K + 1, n)), -one, 0.2 * one, np.zeros((K + 1, n)),
            D * eye, np.array([[1.0], [0.5], [-0.2]])[:N], 0.3 * eye, 0.02, paths, 99,
            np.arange(N, dtype=np.uint32), eye, eye, 0.5 * eye, np.zeros(n), eye, 0 * eye, np.zeros(n))


@needs_ext
def test_em_backends_agree():
    a = _kernels_py.em_ensemble(*_em_args())
    b = _ckernels.em_ensemble(*_em_args())
    for x, y in zip(a, b):
        assert np.allclose(x, np.asarray(y), rtol=1e-12, atol=1e-13)


def test_em_path_offset_is_a_slice():
    full_m, full_c = kernels.em_ensemble(*_em_args(paths=6))
    args = list(_em_args(paths=2))
    tail_m, tail_c = kernels.em_ensemble(*args, 4)
    assert np.array_equal(tail_m, full_m[4:]) and np.array_equal(tail_c, full_c[4:])


def test_backend_name():
    assert kernels.BACKEND in ("python", "cython")
    if _ckernels is not None:
        assert kernels.BACKEND == _ckernels.BACKEND


def test_env_var_selects_numpy_backend():
    env = dict(os.environ, LQMFG_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from lqmfg import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
