"""Pure-numpy versions of the compiled kernels (same signatures and semantics)."""
from __future__ import annotations

import numpy as np


def _rhs(z, s, lam, lam_xbar, bs, gamma, r, B, C):
    s2 = s * s
    zg = 1.0 + z * gamma
    drift_c = lam_xbar + zg * bs * s
    dC = -s2 * C * C + 2.0 * (lam + (1.0 + z) * s) * C - z * (z + 1.0)
    dB = (lam + (z + 1.0) * s - s2 * C) * B - drift_c * C + z * zg * bs
    dA = (z * r * (1.0 - gamma) - 0.5 * z * gamma * zg * bs * bs
          - 0.5 * s2 * B * B - drift_c * B - 0.5 * s2 * C)
    return dA, dB, dC


def riccati_sweep(z, grid, s_node, s_mid, lam, lam_xbar, bs, gamma, r,
                  store_slot, row_offset, row_len, n_start,
                  out_a, out_b, out_c, blow_index, guard):
    """Backward RK4 over ``grid`` for all nodes at once.

    Node k runs from the last grid point down to index ``n_start[k]``.  Grid
    index n with ``store_slot[n] = m >= 0`` writes nodes k < row_len[m] at
    ``row_offset[m] + k`` of the flat outputs.  A node whose |C| exceeds
    ``guard`` (or turns non-finite) records the step index in
    ``blow_index`` and is NaN from then on.
    """
    z = np.asarray(z)
    K = z.size
    N = len(grid) - 1
    A = np.zeros(K, complex)
    B = np.zeros(K, complex)
    C = np.zeros(K, complex)
    dead = np.zeros(K, bool)
    blow_index[:] = -1
    n_start = np.asarray(n_start)

    def store(n):
        m = store_slot[n]
        if m >= 0 and row_len[m] > 0:
            L = row_len[m]
            o = row_offset[m]
            out_a[o:o + L] = A[:L]
            out_b[o:o + L] = B[:L]
            out_c[o:o + L] = C[:L]

    store(N)
    for n in range(N - 1, -1, -1):
        # n_start is non-decreasing, so active nodes form a prefix
        act = int(np.count_nonzero(n_start <= n))
        if act == 0:
            continue
        zz = z[:act]
        a, b, c = A[:act], B[:act], C[:act]
        h = grid[n] - grid[n + 1]
        sa, sm, sb = s_node[n + 1], s_mid[n], s_node[n]
        a1, b1, c1 = _rhs(zz, sa, lam, lam_xbar, bs, gamma, r, b, c)
        a2, b2, c2 = _rhs(zz, sm, lam, lam_xbar, bs, gamma, r, b + 0.5 * h * b1, c + 0.5 * h * c1)
        a3, b3, c3 = _rhs(zz, sm, lam, lam_xbar, bs, gamma, r, b + 0.5 * h * b2, c + 0.5 * h * c2)
        a4, b4, c4 = _rhs(zz, sb, lam, lam_xbar, bs, gamma, r, b + h * b3, c + h * c3)
        with np.errstate(all="ignore"):
            A[:act] = a + h / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
            B[:act] = b + h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
            C[:act] = c + h / 6.0 * (c1 + 2 * c2 + 2 * c3 + c4)
            bad = ~(np.abs(C[:act]) <= guard) | ~np.isfinite(A[:act]) | ~np.isfinite(B[:act])
        newly = bad & ~dead[:act]
        blow_index[:act][newly] = n
        dead[:act] |= bad
        A[dead] = np.nan
        B[dead] = np.nan
        C[dead] = np.nan
        store(n)


def contour_sums(log_zeta, pi, z, a, b, c, coef, out_v, out_z, out_p, out_env,
                 chunk=256):
    K = len(z)
    n = len(log_zeta)
    for i0 in range(0, n, chunk):
        lz = np.asarray(log_zeta[i0:i0 + chunk])[:, None]
        p = np.asarray(pi[i0:i0 + chunk])[:, None]
        E = z[None, :] * lz + a[None, :] + b[None, :] * p + c[None, :] * (0.5 * p * p)
        term = coef[None, :] * np.exp(E)
        out_v[i0:i0 + chunk] = term.real.sum(1)
        out_z[i0:i0 + chunk] = (term * z[None, :]).real.sum(1)
        out_p[i0:i0 + chunk] = (term * (b[None, :] + c[None, :] * p)).real.sum(1)
        out_env[i0:i0 + chunk] = np.abs(term[:, K - 1]) if K else 0.0
