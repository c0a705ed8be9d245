"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or disabled with
``LQMFG_PURE_PYTHON=1``. Signatures and results match ``_ckernels``.
"""

from __future__ import annotations

import numpy as np

from .rng import INIT_STEP, normals

BACKEND = "python"


def simpson_weights(m: int, h: float) -> np.ndarray:
    """Composite weights for ``m`` uniform intervals (``m + 1`` nodes).

    Simpson's rule for even ``m``; for odd ``m >= 3`` the last three intervals
    use the 3/8 rule; a single interval uses the trapezoid rule.
    """
    w = np.zeros(m + 1)
    if m == 0:
        return w
    if m == 1:
        w[:] = h / 2
        return w
    p = m if m % 2 == 0 else m - 3
    if p > 0:
        w[0:p + 1:2] = 2 * h / 3
        w[1:p:2] = 4 * h / 3
        w[0] = w[p] = h / 3
    if p < m:
        w[p] += 3 * h / 8
        w[p + 1] += 9 * h / 8
        w[p + 2] += 9 * h / 8
        w[m] += 3 * h / 8
    return w


def _spectral_norms(X):
    n = X.shape[-1]
    if X.shape[-2] == 1 and n == 1:
        return np.abs(X[..., 0, 0])
    if X.shape[-2:] == (2, 2):
        a, b, c, d = X[..., 0, 0], X[..., 0, 1], X[..., 1, 0], X[..., 1, 1]
        s = a * a + b * b + c * c + d * d
        det = a * d - b * c
        disc = np.sqrt(np.maximum(s * s - 4 * det * det, 0.0))
        return np.sqrt(0.5 * (s + disc))
    return np.linalg.norm(X, ord=2, axis=(-2, -1))


def kappa_profile(phi1, C, E, F, h):
    """Contraction integrand profile on a uniform grid.

    For each node ``t_i`` returns
    ``int_0^{t_i} [ int_tau^T |phi1_i C(tau) E(r)| dr + |phi1_i C(tau) F| ] dtau``
    with composite Simpson weights in both variables. Inputs are stacks of
    ``n x n`` matrices over the ``K`` nodes; ``F`` is a single matrix.
    """
    phi1 = np.ascontiguousarray(phi1, dtype=float)
    C = np.ascontiguousarray(C, dtype=float)
    E = np.ascontiguousarray(E, dtype=float)
    F = np.ascontiguousarray(F, dtype=float)
    K = phi1.shape[0]
    # inner weights: row j integrates over nodes j..K-1
    Winner = np.zeros((K, K))
    for j in range(K):
        Winner[j, j:] = simpson_weights(K - 1 - j, h)
    out = np.zeros(K)
    for i in range(1, K):
        Y = phi1[i] @ C[:i + 1]                                 # (i+1, n, n)
        Z = np.einsum("jab,kbc->jkac", Y, E)                    # (i+1, K, n, n)
        inner = np.sum(_spectral_norms(Z) * Winner[:i + 1], axis=1)
        term = _spectral_norms(Y @ F)
        out[i] = simpson_weights(i, h) @ (inner + term)
    return out


def em_ensemble(F_self, F_sum, f, Ks, Ko, kk, D, x_init, init_chol, dt,
                paths, seed, stream_ids, Q, R, Gamma, eta, Qf, Gammaf, etaf,
                path_offset=0):
    """Euler-Maruyama ensemble of the N-player closed loop.

    Drift of player ``i`` at step ``k`` is
    ``F_self[k] X_i + F_sum[k] S + f[k]`` with ``S`` the sum of all states;
    the control is ``Ks[k] X_i + Ko[k] (S - X_i) + kk[k]``. Returns the
    population-mean paths ``(paths, K + 1, n)`` and the per-player realized
    costs ``(paths, N)`` (trapezoid running cost plus terminal cost).
    """
    K = F_self.shape[0] - 1
    N, n = x_init.shape
    n2 = D.shape[1]
    sq = np.sqrt(dt)
    pidx = (np.arange(paths, dtype=np.uint64) + np.uint64(path_offset)).astype(np.uint32)
    streams = np.asarray(stream_ids, dtype=np.uint32)

    z0 = normals(seed, INIT_STEP, pidx[:, None], streams[None, :], n)
    X = x_init[None, :, :] + z0 @ init_chol.T                   # (paths, N, n)
    means = np.empty((paths, K + 1, n))
    cost = np.zeros((paths, N))

    def running(k, X, S, m):
        u = X @ (Ks[k] - Ko[k]).T + (S @ Ko[k].T)[:, None, :] + kk[k]
        e = X - (m @ Gamma.T)[:, None, :] - eta
        return np.einsum("pia,ab,pib->pi", e, Q, e) + np.einsum("pia,ab,pib->pi", u, R, u)

    for k in range(K + 1):
        S = X.sum(axis=1)
        m = S / N
        means[:, k] = m
        wgt = 0.5 if (k == 0 or k == K) else 1.0
        cost += wgt * dt * running(k, X, S, m)
        if k == K:
            break
        drift = X @ F_self[k].T + (S @ F_sum[k].T)[:, None, :] + f[k]
        X = X + drift * dt
        if n2:
            z = normals(seed, k, pidx[:, None], streams[None, :], n2)
            X = X + sq * (z @ D.T)
    e = X - (m @ Gammaf.T)[:, None, :] - etaf
    cost += np.einsum("pia,ab,pib->pi", e, Qf, e)
    return means, cost
