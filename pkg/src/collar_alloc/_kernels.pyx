# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: backward RK4 sweep of the Riccati system and the
contour sums of the Fourier inversion.  Semantics match ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, cos, sin, sqrt, isfinite

cnp.import_array()


cdef inline void _rhs(double complex z, double s, double lam, double lam_xbar,
                      double bs, double gamma, double r,
                      double complex B, double complex C,
                      double complex *dA, double complex *dB, double complex *dC) noexcept nogil:
    cdef double s2 = s * s
    cdef double complex zg = 1.0 + z * gamma
    cdef double complex drift_c = lam_xbar + zg * bs * s
    dC[0] = -s2 * C * C + 2.0 * (lam + (1.0 + z) * s) * C - z * (z + 1.0)
    dB[0] = (lam + (z + 1.0) * s - s2 * C) * B - drift_c * C + z * zg * bs
    dA[0] = (z * r * (1.0 - gamma) - 0.5 * z * gamma * zg * bs * bs
             - 0.5 * s2 * B * B - drift_c * B - 0.5 * s2 * C)


def riccati_sweep(const double complex[:] z, const double[:] grid,
                  const double[:] s_node, const double[:] s_mid,
                  double lam, double lam_xbar, double bs, double gamma, double r,
                  const long[:] store_slot, const long[:] row_offset,
                  const long[:] row_len, const long[:] n_start,
                  double complex[:] out_a, double complex[:] out_b,
                  double complex[:] out_c, long[:] blow_index, double guard):
    """Integrate every node backward from grid[-1]; see _fallback.riccati_sweep."""
    cdef Py_ssize_t K = z.shape[0]
    cdef Py_ssize_t N = grid.shape[0] - 1
    cdef Py_ssize_t k, n, slot
    cdef double h, sa, sm, sb, mag
    cdef double complex zk, A, B, C, a1, b1, c1, a2, b2, c2, a3, b3, c3, a4, b4, c4
    cdef double complex nan_c = float("nan") + 0j
    cdef bint dead
    with nogil:
        for k in range(K):
            zk = z[k]
            A = 0.0
            B = 0.0
            C = 0.0
            dead = False
            blow_index[k] = -1
            slot = store_slot[N]
            if slot >= 0 and k < row_len[slot]:
                out_a[row_offset[slot] + k] = A
                out_b[row_offset[slot] + k] = B
                out_c[row_offset[slot] + k] = C
            n = N - 1
            while n >= n_start[k]:
                if not dead:
                    h = grid[n] - grid[n + 1]
                    sa = s_node[n + 1]
                    sm = s_mid[n]
                    sb = s_node[n]
                    _rhs(zk, sa, lam, lam_xbar, bs, gamma, r, B, C, &a1, &b1, &c1)
                    _rhs(zk, sm, lam, lam_xbar, bs, gamma, r, B + 0.5 * h * b1, C + 0.5 * h * c1, &a2, &b2, &c2)
                    _rhs(zk, sm, lam, lam_xbar, bs, gamma, r, B + 0.5 * h * b2, C + 0.5 * h * c2, &a3, &b3, &c3)
                    _rhs(zk, sb, lam, lam_xbar, bs, gamma, r, B + h * b3, C + h * c3, &a4, &b4, &c4)
                    A = A + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
                    B = B + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                    C = C + h / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
                    mag = sqrt(C.real * C.real + C.imag * C.imag)
                    if not (mag <= guard) or not isfinite(A.real) or not isfinite(A.imag) \
                            or not isfinite(B.real) or not isfinite(B.imag):
                        dead = True
                        blow_index[k] = n
                        A = nan_c
                        B = nan_c
                        C = nan_c
                slot = store_slot[n]
                if slot >= 0 and k < row_len[slot]:
                    out_a[row_offset[slot] + k] = A
                    out_b[row_offset[slot] + k] = B
                    out_c[row_offset[slot] + k] = C
                n -= 1


def contour_sums(const double[:] log_zeta, const double[:] pi,
                 const double complex[:] z, const double complex[:] a,
                 const double complex[:] b, const double complex[:] c,
                 const double complex[:] coef,
                 double[:] out_v, double[:] out_z, double[:] out_p, double[:] out_env):
    """Accumulate Re sum coef e^E, Re sum coef z e^E, Re sum coef (B + C pi) e^E
    with E = z log_zeta + A + B pi + C pi^2 / 2; out_env is |coef e^E| at the last node."""
    cdef Py_ssize_t n = log_zeta.shape[0]
    cdef Py_ssize_t K = z.shape[0]
    cdef Py_ssize_t i, k
    cdef double lz, p, hp2, ex, sv, sz, sp, mag
    cdef double complex E, term, dp
    with nogil:
        for i in range(n):
            lz = log_zeta[i]
            p = pi[i]
            hp2 = 0.5 * p * p
            sv = 0.0
            sz = 0.0
            sp = 0.0
            mag = 0.0
            for k in range(K):
                E = z[k] * lz + a[k] + b[k] * p + c[k] * hp2
                ex = exp(E.real)
                term = coef[k] * (ex * (cos(E.imag) + 1j * sin(E.imag)))
                sv = sv + term.real
                sz = sz + (term * z[k]).real
                dp = b[k] + c[k] * p
                sp = sp + (term * dp).real
                if k == K - 1:
                    mag = sqrt(term.real * term.real + term.imag * term.imag)
            out_v[i] = sv
            out_z[i] = sz
            out_p[i] = sp
            out_env[i] = mag
