# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled shooting kernels for the built-in models.

Mirrors ``_kernels_py``: RK4 rollout of the error dynamics augmented with the
running cost, the augmented-Lagrangian merit, and its central-difference
gradient. Only models with a known kernel code are handled here.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.string cimport memcpy

cnp.import_array()

DEF MAXDIM = 16

cdef enum:
    KERNEL_BENCHMARK = 1
    KERNEL_INTEGRATOR = 2

SUPPORTED_CODES = (KERNEL_BENCHMARK, KERNEL_INTEGRATOR)


cdef inline void _rhs(int code, int n, const double* x, const double* u, double* out) noexcept nogil:
    cdef double ex, q
    cdef int i
    if code == KERNEL_BENCHMARK:
        ex = exp(-x[1])
        q = 0.25 * x[0] * x[0]
        out[0] = (0.1 - 0.1 * ex) / (1.0 + ex) + q + 2.0 * u[0]
        out[1] = q + u[1] + 0.1 * u[1] * u[1] * u[1]
    else:
        for i in range(n):
            out[i] = u[i]


cdef inline double _quad(int n, const double* M, const double* v) noexcept nogil:
    cdef double acc = 0.0, row
    cdef int i, j
    for i in range(n):
        row = 0.0
        for j in range(n):
            row += M[i * n + j] * v[j]
        acc += v[i] * row
    return acc


cdef void _rollout(int code, int n, int m, int N, int s, double h,
                   const double* x_des, const double* u_ref, const double* U,
                   const double* Q, const double* R,
                   double* states, double* cum, int start) noexcept nogil:
    """Fill ``states`` from interval ``start`` on; entries before it and
    ``cum[0..start]`` must already hold the unperturbed prefix."""
    cdef double e[MAXDIM]
    cdef double x[MAXDIM]
    cdef double du[MAXDIM]
    cdef double k1[MAXDIM]
    cdef double k2[MAXDIM]
    cdef double k3[MAXDIM]
    cdef double k4[MAXDIM]
    cdef double c1, c2, c3, c4, ucost, c
    cdef const double* u
    cdef int i, j, sub, k
    for j in range(n):
        e[j] = states[start * s * n + j]
    c = cum[start]
    k = start * s
    for i in range(start, N):
        u = U + i * m
        for j in range(m):
            du[j] = u[j] - u_ref[j]
        ucost = _quad(m, R, du)
        for sub in range(s):
            for j in range(n):
                x[j] = e[j] + x_des[j]
            _rhs(code, n, x, u, k1)
            c1 = _quad(n, Q, e) + ucost
            for j in range(n):
                x[j] = e[j] + 0.5 * h * k1[j]
            c2 = _quad(n, Q, x) + ucost
            for j in range(n):
                x[j] += x_des[j]
            _rhs(code, n, x, u, k2)
            for j in range(n):
                x[j] = e[j] + 0.5 * h * k2[j]
            c3 = _quad(n, Q, x) + ucost
            for j in range(n):
                x[j] += x_des[j]
            _rhs(code, n, x, u, k3)
            for j in range(n):
                x[j] = e[j] + h * k3[j]
            c4 = _quad(n, Q, x) + ucost
            for j in range(n):
                x[j] += x_des[j]
            _rhs(code, n, x, u, k4)
            for j in range(n):
                e[j] = e[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            c = c + (h / 6.0) * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
            k += 1
            for j in range(n):
                states[k * n + j] = e[j]
        cum[i + 1] = c


cdef double _merit(int n, int N, int s, const double* states, double running,
                   const double* P, double eta, const long* cidx, int K,
                   const double* lo, const double* hi, const double* x_des,
                   const double* nb, const double* clear2, int M,
                   const double* lam, double mu, double* g, double* J_out) noexcept nogil:
    cdef int a, j, b, idx = 0
    cdef const double* ek
    cdef const double* eN = states + N * s * n
    cdef double J = running + _quad(n, P, eN)
    cdef double d, d2, pen = 0.0, sh
    for a in range(K):
        ek = states + cidx[a] * n
        for j in range(n):
            g[idx + j] = lo[j] - ek[j]
            g[idx + n + j] = ek[j] - hi[j]
        idx += 2 * n
    g[idx] = _quad(n, P, eN) - eta
    idx += 1
    for b in range(M):
        for a in range(K):
            ek = states + cidx[a] * n
            d2 = 0.0
            for j in range(n):
                d = ek[j] + x_des[j] - nb[(b * K + a) * n + j]
                d2 += d * d
            g[idx] = d2 - clear2[b]
            idx += 1
    for j in range(idx):
        sh = lam[j] + mu * g[j]
        if sh < 0.0:
            sh = 0.0
        pen += sh * sh - lam[j] * lam[j]
    J_out[0] = J
    return J + pen / (2.0 * mu)


def rollout(int code, double[::1] e0, double[::1] x_des, double[::1] u_ref, double[:, ::1] controls,
            double h, int substeps, double[:, ::1] Q, double[:, ::1] R):
    cdef int n = e0.shape[0], N = controls.shape[0], m = controls.shape[1]
    if n > MAXDIM or m > MAXDIM:
        raise ValueError("state dimension too large for the compiled kernel")
    states = np.empty((N * substeps + 1, n))
    cum = np.zeros(N + 1)
    cdef double[:, ::1] sv = states
    cdef double[::1] cv = cum
    cdef int j
    for j in range(n):
        sv[0, j] = e0[j]
    with nogil:
        _rollout(code, n, m, N, substeps, h, &x_des[0], &u_ref[0], &controls[0, 0], &Q[0, 0], &R[0, 0],
                 &sv[0, 0], &cv[0], 0)
    return states, float(cum[N])


def merit(int code, double[::1] u, double[::1] e0, double[::1] x_des, double[::1] u_ref,
          double h, int substeps, int N, double[:, ::1] Q, double[:, ::1] R, double[:, ::1] P,
          double eta, long[::1] cidx, double[::1] lo, double[::1] hi, double[:, :, ::1] nb,
          double[::1] clear2, double[::1] lam, double mu):
    cdef int n = e0.shape[0], m = u.shape[0] // N, K = cidx.shape[0], M = nb.shape[0]
    cdef int G = K * 2 * n + 1 + M * K
    states = np.empty((N * substeps + 1, n))
    cum = np.zeros(N + 1)
    g = np.empty(G)
    cdef double[:, ::1] sv = states
    cdef double[::1] cv = cum
    cdef double[::1] gv = g
    cdef double J, val
    cdef const double* nbp = &nb[0, 0, 0] if M > 0 else NULL
    cdef const double* c2p = &clear2[0] if M > 0 else NULL
    cdef int j
    for j in range(n):
        sv[0, j] = e0[j]
    with nogil:
        _rollout(code, n, m, N, substeps, h, &x_des[0], &u_ref[0], &u[0], &Q[0, 0], &R[0, 0],
                 &sv[0, 0], &cv[0], 0)
        val = _merit(n, N, substeps, &sv[0, 0], cv[N], &P[0, 0], eta, &cidx[0], K, &lo[0], &hi[0],
                     &x_des[0], nbp, c2p, M, &lam[0], mu, &gv[0], &J)
    return val, J, g


def merit_grad(int code, double[::1] u, double[::1] e0, double[::1] x_des, double[::1] u_ref,
               double h, int substeps, int N, double[:, ::1] Q, double[:, ::1] R, double[:, ::1] P,
               double eta, long[::1] cidx, double[::1] lo, double[::1] hi, double[:, :, ::1] nb,
               double[::1] clear2, double[::1] lam, double mu, double fd_step):
    cdef int n = e0.shape[0], nv = u.shape[0], m = nv // N, K = cidx.shape[0], M = nb.shape[0]
    cdef int G = K * 2 * n + 1 + M * K
    base = np.empty((N * substeps + 1, n))
    work = np.empty((N * substeps + 1, n))
    cum = np.zeros(N + 1)
    wcum = np.zeros(N + 1)
    upert = np.array(u, copy=True)
    grad = np.empty(nv)
    g = np.empty(G)
    cdef double[:, ::1] bv = base
    cdef double[:, ::1] wv = work
    cdef double[::1] cv = cum
    cdef double[::1] wcv = wcum
    cdef double[::1] up = upert
    cdef double[::1] gr = grad
    cdef double[::1] gv = g
    cdef const double* nbp = &nb[0, 0, 0] if M > 0 else NULL
    cdef const double* c2p = &clear2[0] if M > 0 else NULL
    cdef double J, val0, vp, vm, orig
    cdef int j, v, start
    for j in range(n):
        bv[0, j] = e0[j]
    with nogil:
        _rollout(code, n, m, N, substeps, h, &x_des[0], &u_ref[0], &u[0], &Q[0, 0], &R[0, 0],
                 &bv[0, 0], &cv[0], 0)
        val0 = _merit(n, N, substeps, &bv[0, 0], cv[N], &P[0, 0], eta, &cidx[0], K, &lo[0], &hi[0],
                      &x_des[0], nbp, c2p, M, &lam[0], mu, &gv[0], &J)
        for v in range(nv):
            start = v // m
            orig = up[v]
            memcpy(&wv[0, 0], &bv[0, 0], (start * substeps + 1) * n * sizeof(double))
            memcpy(&wcv[0], &cv[0], (start + 1) * sizeof(double))
            up[v] = orig + fd_step
            _rollout(code, n, m, N, substeps, h, &x_des[0], &u_ref[0], &up[0], &Q[0, 0], &R[0, 0],
                     &wv[0, 0], &wcv[0], start)
            vp = _merit(n, N, substeps, &wv[0, 0], wcv[N], &P[0, 0], eta, &cidx[0], K, &lo[0], &hi[0],
                        &x_des[0], nbp, c2p, M, &lam[0], mu, &gv[0], &J)
            up[v] = orig - fd_step
            _rollout(code, n, m, N, substeps, h, &x_des[0], &u_ref[0], &up[0], &Q[0, 0], &R[0, 0],
                     &wv[0, 0], &wcv[0], start)
            vm = _merit(n, N, substeps, &wv[0, 0], wcv[N], &P[0, 0], eta, &cidx[0], K, &lo[0], &hi[0],
                        &x_des[0], nbp, c2p, M, &lam[0], mu, &gv[0], &J)
            up[v] = orig
            gr[v] = (vp - vm) / (2.0 * fd_step)
    return val0, grad
