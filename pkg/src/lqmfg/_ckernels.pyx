# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: Philox4x32-10 draws, the Euler-Maruyama ensemble and
the contraction-constant quadrature. Results agree with ``_kernels_py``
(integers bit-for-bit, floating results to rounding)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, cos, sin, fabs, M_PI
from libc.stdint cimport uint32_t, uint64_t

cnp.import_array()

BACKEND = "cython"

cdef uint32_t PM0 = 0xD2511F53
cdef uint32_t PM1 = 0xCD9E8D57
cdef uint32_t PW0 = 0x9E3779B9
cdef uint32_t PW1 = 0xBB67AE85
cdef uint32_t INIT_STEP = 0xFFFFFFFF
cdef double INV52 = 1.0 / 4503599627370496.0


def _c(x, dtype=float):
    # writable C-contiguous copy; model arrays are read-only
    return np.array(x, dtype=dtype, order="C")


cdef inline void _philox(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t x0 = c[0], x1 = c[1], x2 = c[2], x3 = c[3]
    cdef uint32_t y0, y2
    cdef int r
    for r in range(10):
        if r:
            k0 = k0 + PW0
            k1 = k1 + PW1
        p0 = <uint64_t>PM0 * <uint64_t>x0
        p1 = <uint64_t>PM1 * <uint64_t>x2
        y0 = (<uint32_t>(p1 >> 32)) ^ x1 ^ k0
        y2 = (<uint32_t>(p0 >> 32)) ^ x3 ^ k1
        x1 = <uint32_t>p1
        x3 = <uint32_t>p0
        x0 = y0
        x2 = y2
    c[0] = x0
    c[1] = x1
    c[2] = x2
    c[3] = x3


cdef inline double _unit(uint32_t a, uint32_t b) noexcept nogil:
    cdef uint64_t x = (<uint64_t>(a >> 6)) * 67108864ULL + (<uint64_t>(b >> 6))
    return (<double>x + 0.5) * INV52


cdef inline void _normal_pair(uint32_t k0, uint32_t k1, uint32_t step, uint32_t path,
                              uint32_t stream, uint32_t block, double* z) noexcept nogil:
    cdef uint32_t c[4]
    c[0] = step
    c[1] = path
    c[2] = stream
    c[3] = block
    _philox(c, k0, k1)
    cdef double u1 = _unit(c[0], c[1])
    cdef double u2 = _unit(c[2], c[3])
    cdef double r = sqrt(-2.0 * log(u1))
    cdef double phi = 2.0 * M_PI * u2
    z[0] = r * cos(phi)
    z[1] = r * sin(phi)


cdef inline void _normals(uint32_t k0, uint32_t k1, uint32_t step, uint32_t path,
                          uint32_t stream, int count, double* out) noexcept nogil:
    cdef double z[2]
    cdef int b, d
    for b in range((count + 1) // 2):
        _normal_pair(k0, k1, step, path, stream, <uint32_t>b, z)
        for d in range(2):
            if 2 * b + d < count:
                out[2 * b + d] = z[d]


def philox4x32(counter, key):
    """Philox4x32-10 on counters of shape ``(..., 4)``."""
    cdef cnp.ndarray[cnp.uint32_t, ndim=2] c = _c(
        np.asarray(counter, dtype=np.uint32).reshape(-1, 4), np.uint32)
    cdef uint32_t k0 = <uint32_t>int(key[0]), k1 = <uint32_t>int(key[1])
    cdef Py_ssize_t i
    out = c.copy()
    cdef cnp.uint32_t[:, ::1] o = out
    with nogil:
        for i in range(o.shape[0]):
            _philox(<uint32_t*>&o[i, 0], k0, k1)
    return out.reshape(np.shape(counter))


def normals(seed, step, path, stream, int count):
    """Same addressing as :func:`lqmfg.rng.normals` for scalar addresses."""
    cdef uint64_t s = <uint64_t>int(seed)
    out = np.empty(count)
    cdef double[::1] o = out
    _normals(<uint32_t>(s & 0xFFFFFFFFULL), <uint32_t>(s >> 32), <uint32_t>int(step),
             <uint32_t>int(path), <uint32_t>int(stream), count, &o[0])
    return out


cdef inline double _simpson_w(Py_ssize_t idx, Py_ssize_t m, double h) noexcept nogil:
    cdef Py_ssize_t p
    cdef double w = 0.0
    if m == 0:
        return 0.0
    if m == 1:
        return h / 2
    p = m if m % 2 == 0 else m - 3
    if p > 0 and idx <= p:
        if idx == 0 or idx == p:
            w = h / 3
        elif idx % 2 == 1:
            w = 4 * h / 3
        else:
            w = 2 * h / 3
    if p < m:
        if idx == p or idx == m:
            w += 3 * h / 8
        elif idx == p + 1 or idx == p + 2:
            w += 9 * h / 8
    return w


def simpson_weights(Py_ssize_t m, double h):
    out = np.empty(m + 1)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(m + 1):
        o[i] = _simpson_w(i, m, h)
    return out


cdef inline double _norm2(double* X, int n) noexcept nogil:
    cdef double a, b, c, d, s, det, disc
    if n == 1:
        return fabs(X[0])
    a = X[0]
    b = X[1]
    c = X[2]
    d = X[3]
    s = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = s * s - 4 * det * det
    if disc < 0:
        disc = 0
    return sqrt(0.5 * (s + sqrt(disc)))


cdef inline void _matmul(double* X, double* Y, double* out, int n) noexcept nogil:
    cdef int a, b, c
    cdef double acc
    for a in range(n):
        for c in range(n):
            acc = 0
            for b in range(n):
                acc += X[a * n + b] * Y[b * n + c]
            out[a * n + c] = acc


cdef inline double _norm_prod2(double* Y, double* E) noexcept nogil:
    # spectral norm of the 2x2 product Y E
    cdef double z[4]
    z[0] = Y[0] * E[0] + Y[1] * E[2]
    z[1] = Y[0] * E[1] + Y[1] * E[3]
    z[2] = Y[2] * E[0] + Y[3] * E[2]
    z[3] = Y[2] * E[1] + Y[3] * E[3]
    return _norm2(z, 2)


def kappa_profile(phi1, C, E, F, double h):
    """Compiled version of :func:`lqmfg._kernels_py.kappa_profile` for ``n <= 2``.

    For ``n = 1`` the norms factor, so the inner integrals are formed once
    per node and the cost is quadratic in the node count.
    """
    cdef double[:, :, ::1] P = _c(phi1, dtype=float)
    cdef double[:, :, ::1] Cm = _c(C, dtype=float)
    cdef double[:, :, ::1] Em = _c(E, dtype=float)
    cdef double[:, ::1] Fm = _c(F, dtype=float)
    cdef int n = P.shape[1]
    if n > 2:
        raise ValueError("compiled contraction kernel supports n <= 2")
    cdef Py_ssize_t K = P.shape[0], i, j, k
    out = np.zeros(K)
    cdef double[::1] o = out
    inner_arr = np.zeros(K)
    cdef double[::1] inner_j = inner_arr
    W_arr = np.zeros(K)
    cdef double[::1] W = W_arr
    cdef double Y[4]
    cdef double Z[4]
    cdef double inner, acc, fnorm
    with nogil:
        if n == 1:
            fnorm = fabs(Fm[0, 0])
            for j in range(K):
                inner = 0
                for k in range(j, K):
                    inner += _simpson_w(k - j, K - 1 - j, h) * fabs(Em[k, 0, 0])
                inner_j[j] = inner + fnorm
            for i in range(1, K):
                acc = 0
                for j in range(i + 1):
                    acc += _simpson_w(j, i, h) * fabs(P[i, 0, 0] * Cm[j, 0, 0]) * inner_j[j]
                o[i] = acc
        else:
            for i in range(1, K):
                acc = 0
                for j in range(i + 1):
                    _matmul(&P[i, 0, 0], &Cm[j, 0, 0], Y, 2)
                    for k in range(j, K):
                        W[k] = _simpson_w(k - j, K - 1 - j, h)
                    inner = 0
                    for k in range(j, K):
                        inner += W[k] * _norm_prod2(Y, &Em[k, 0, 0])
                    _matmul(Y, &Fm[0, 0], Z, 2)
                    acc += _simpson_w(j, i, h) * (inner + _norm2(Z, 2))
                o[i] = acc
    return out


def em_ensemble(F_self, F_sum, f, Ks, Ko, kk, D, x_init, init_chol, double dt,
                Py_ssize_t paths, seed, stream_ids, Q, R, Gamma, eta, Qf, Gammaf, etaf,
                path_offset=0):
    """Compiled version of :func:`lqmfg._kernels_py.em_ensemble`."""
    cdef double[:, :, ::1] Fs = _c(F_self, dtype=float)
    cdef double[:, :, ::1] Fu = _c(F_sum, dtype=float)
    cdef double[:, ::1] fv = _c(f, dtype=float)
    cdef double[:, :, ::1] KS = _c(Ks, dtype=float)
    cdef double[:, :, ::1] KO = _c(Ko, dtype=float)
    cdef double[:, ::1] kv = _c(kk, dtype=float)
    cdef double[:, ::1] Dm = _c(D, dtype=float)
    cdef double[:, ::1] X0 = _c(x_init, dtype=float)
    cdef double[:, ::1] L0 = _c(init_chol, dtype=float)
    cdef cnp.uint32_t[::1] sid = np.array(stream_ids, dtype=np.uint32, order="C")
    cdef double[:, ::1] Qm = _c(Q, dtype=float)
    cdef double[:, ::1] Rm = _c(R, dtype=float)
    cdef double[:, ::1] Gm = _c(Gamma, dtype=float)
    cdef double[::1] et = _c(eta, dtype=float)
    cdef double[:, ::1] Qfm = _c(Qf, dtype=float)
    cdef double[:, ::1] Gfm = _c(Gammaf, dtype=float)
    cdef double[::1] etf = _c(etaf, dtype=float)

    cdef Py_ssize_t Ksteps = Fs.shape[0] - 1
    cdef Py_ssize_t N = X0.shape[0]
    cdef int n = X0.shape[1], n1 = KS.shape[1], n2 = Dm.shape[1]
    cdef uint64_t s = <uint64_t>int(seed)
    cdef uint32_t k0 = <uint32_t>(s & 0xFFFFFFFFULL), k1 = <uint32_t>(s >> 32)
    cdef uint64_t poff = <uint64_t>int(path_offset)
    cdef double sq = sqrt(dt)

    means = np.empty((paths, Ksteps + 1, n))
    cost = np.zeros((paths, N))
    cdef double[:, :, ::1] mo = means
    cdef double[:, ::1] co = cost
    X_arr = np.empty((N, n))
    cdef double[:, ::1] X = X_arr
    buf = np.zeros(6 * max(n, n1, n2, 1) + 2)
    cdef double[::1] wk = buf
    cdef double* S = &wk[0]
    cdef double* m = S + max(n, n1, n2, 1)
    cdef double* tgt = m + max(n, n1, n2, 1)
    cdef double* KoS = tgt + max(n, n1, n2, 1)
    cdef double* u = KoS + max(n, n1, n2, 1)
    cdef double* z = u + max(n, n1, n2, 1)
    cdef double e_a, acc, wgt, qf, uf, dr
    cdef Py_ssize_t p, k, i
    cdef int a, b, c
    cdef uint32_t pid

    with nogil:
        for p in range(paths):
            pid = <uint32_t>(poff + <uint64_t>p)
            for i in range(N):
                _normals(k0, k1, INIT_STEP, pid, sid[i], n, z)
                for a in range(n):
                    acc = X0[i, a]
                    for b in range(n):
                        acc = acc + L0[a, b] * z[b]
                    X[i, a] = acc
            for k in range(Ksteps + 1):
                for a in range(n):
                    S[a] = 0
                for i in range(N):
                    for a in range(n):
                        S[a] += X[i, a]
                for a in range(n):
                    m[a] = S[a] / N
                    mo[p, k, a] = m[a]
                # running cost at node k
                wgt = 0.5 if (k == 0 or k == Ksteps) else 1.0
                for a in range(n):
                    acc = et[a]
                    for b in range(n):
                        acc = acc + Gm[a, b] * m[b]
                    tgt[a] = acc
                for a in range(n1):
                    acc = kv[k, a]
                    for b in range(n):
                        acc = acc + KO[k, a, b] * S[b]
                    KoS[a] = acc
                for i in range(N):
                    for a in range(n1):
                        acc = KoS[a]
                        for b in range(n):
                            acc = acc + (KS[k, a, b] - KO[k, a, b]) * X[i, b]
                        u[a] = acc
                    qf = 0
                    for a in range(n):
                        e_a = X[i, a] - tgt[a]
                        for b in range(n):
                            qf = qf + e_a * Qm[a, b] * (X[i, b] - tgt[b])
                    uf = 0
                    for a in range(n1):
                        for b in range(n1):
                            uf = uf + u[a] * Rm[a, b] * u[b]
                    co[p, i] += wgt * dt * (qf + uf)
                if k == Ksteps:
                    break
                # Euler-Maruyama step; drift uses S from before the update
                for a in range(n):
                    acc = fv[k, a]
                    for b in range(n):
                        acc = acc + Fu[k, a, b] * S[b]
                    KoS[a] = acc        # reused as the common drift part
                for i in range(N):
                    if n2:
                        _normals(k0, k1, <uint32_t>k, pid, sid[i], n2, z)
                    for a in range(n):
                        dr = KoS[a]
                        for b in range(n):
                            dr = dr + Fs[k, a, b] * X[i, b]
                        u[a] = dr
                    for a in range(n):
                        acc = X[i, a] + u[a] * dt
                        for c in range(n2):
                            acc = acc + sq * Dm[a, c] * z[c]
                        X[i, a] = acc
            # terminal cost
            for a in range(n):
                acc = etf[a]
                for b in range(n):
                    acc = acc + Gfm[a, b] * m[b]
                tgt[a] = acc
            for i in range(N):
                qf = 0
                for a in range(n):
                    e_a = X[i, a] - tgt[a]
                    for b in range(n):
                        qf = qf + e_a * Qfm[a, b] * (X[i, b] - tgt[b])
                co[p, i] += qf
    return means, cost
