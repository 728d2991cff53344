"""Riccati system for the Q-moment generating function of ln zeta_T.

H(t, zeta, pi; z) = zeta^z exp(A + B pi + C pi^2 / 2) with A = B = C = 0 at T.
With s = R_t + rho sigma_x the coefficients solve (forward time t)

    C' = -s^2 C^2 + 2 (lam + (1 + z) s) C - z (z + 1)
    B' = (lam + (1 + z) s - s^2 C) B - (lam x_bar + (1 + z gamma) beta sigma s) C
         + z (1 + z gamma) beta sigma
    A' = z r (1 - gamma) - z gamma (1 + z gamma) beta^2 sigma^2 / 2 - s^2 B^2 / 2
         - (lam x_bar + (1 + z gamma) beta sigma s) B - s^2 C / 2

integrated backward from T by fixed-step RK4.  A carries no feedback, so its
RK4 update is Simpson quadrature of A' along the B, C stages.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .filtering import VarianceCurve
from .model import ModelParams, UtilityParams

BLOWUP_GUARD = 1e8


class RiccatiBlowUp(ArithmeticError):
    pass


def make_grid(horizon: float, steps: int, extra=()) -> np.ndarray:
    """Uniform grid on [0, T] merged with ``extra`` times."""
    base = np.linspace(0.0, horizon, int(steps) + 1)
    extra = np.asarray(list(extra), dtype=float)
    if extra.size:
        if np.any(extra < 0) or np.any(extra > horizon):
            raise ValueError("extra times must lie in [0, T]")
        base = np.union1d(base, extra)
        # drop near-duplicates from float noise
        keep = np.concatenate([[True], np.diff(base) > 1e-12 * max(horizon, 1.0)])
        base = base[keep]
        for t in extra:
            base[np.argmin(np.abs(base - t))] = t
    return base


@dataclass
class RiccatiSolution:
    """Coefficient values for a vector of exponents ``z`` at stored times.

    Row m (time ``times[m]``) holds the first ``row_len[m]`` nodes, laid out
    flat from ``row_offset[m]``.  ``blow_time[k]`` is the grid time at which
    node k diverged (NaN if it did not).
    """

    z: np.ndarray
    grid: np.ndarray
    times: np.ndarray
    row_offset: np.ndarray
    row_len: np.ndarray
    a_flat: np.ndarray
    b_flat: np.ndarray
    c_flat: np.ndarray
    blow_time: np.ndarray
    error_estimate: float = float("nan")

    @property
    def blew_up(self) -> bool:
        return bool(np.any(np.isfinite(self.blow_time)))

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def slot(self, t: float) -> int:
        d = np.abs(self.times - t)
        m = int(np.argmin(d))
        if d[m] > 1e-12 * max(1.0, self.horizon):
            raise KeyError(f"time {t} is not stored in this solution")
        return m

    def row(self, m: int):
        o, L = int(self.row_offset[m]), int(self.row_len[m])
        return (self.z[:L], self.a_flat[o:o + L], self.b_flat[o:o + L], self.c_flat[o:o + L])

    def coefficients(self, t: float):
        """(z, A, B, C) at time t, linearly interpolated between stored times."""
        try:
            return self.row(self.slot(t))
        except KeyError:
            pass
        if not self.times[0] <= t <= self.times[-1]:
            raise ValueError(f"t={t} outside stored range")
        j = int(np.searchsorted(self.times, t))
        z0, a0, b0, c0 = self.row(j - 1)
        z1, a1, b1, c1 = self.row(j)
        L = min(z0.size, z1.size)
        w = (t - self.times[j - 1]) / (self.times[j] - self.times[j - 1])
        return (z0[:L], (1 - w) * a0[:L] + w * a1[:L], (1 - w) * b0[:L] + w * b1[:L],
                (1 - w) * c0[:L] + w * c1[:L])

    def _full(self, flat):
        out = np.full((self.times.size, self.z.size), np.nan + 0j)
        for m in range(self.times.size):
            o, L = self.row_offset[m], self.row_len[m]
            out[m, :L] = flat[o:o + L]
        return out

    @property
    def a_vals(self):
        return self._full(self.a_flat)

    @property
    def b_vals(self):
        return self._full(self.b_flat)

    @property
    def c_vals(self):
        return self._full(self.c_flat)


def _sweep(params: ModelParams, gamma: float, r_curve: VarianceCurve, z, grid, store_idx,
           row_len=None, guard=BLOWUP_GUARD) -> RiccatiSolution:
    z = np.ascontiguousarray(np.atleast_1d(np.asarray(z, dtype=complex)))
    grid = np.ascontiguousarray(np.asarray(grid, dtype=float))
    N = grid.size - 1
    store_idx = np.asarray(store_idx, dtype=np.int64)
    M = store_idx.size
    if row_len is None:
        row_len = np.full(M, z.size, dtype=np.int64)
    row_len = np.asarray(row_len, dtype=np.int64)
    store_slot = np.full(N + 1, -1, dtype=np.int64)
    store_slot[store_idx] = np.arange(M)
    row_offset = np.zeros(M + 1, dtype=np.int64)
    row_offset[1:] = np.cumsum(row_len)
    # node k is needed down to the first stored index whose row still holds it
    n_start = np.full(z.size, N, dtype=np.int64)
    for m in range(M):
        L = row_len[m]
        n_start[:L] = np.minimum(n_start[:L], store_idx[m])
    n_start = np.minimum.accumulate(n_start[::-1])[::-1].copy()
    total = int(row_offset[-1])
    out_a = np.zeros(total, complex)
    out_b = np.zeros(total, complex)
    out_c = np.zeros(total, complex)
    blow = np.full(z.size, -1, dtype=np.int64)
    s_node = np.ascontiguousarray(r_curve.loading(grid), dtype=float)
    s_mid = np.ascontiguousarray(r_curve.loading(0.5 * (grid[1:] + grid[:-1])), dtype=float)
    p = params
    kernels.riccati_sweep(z, grid, s_node, s_mid, p.lam, p.lam * p.x_bar, p.beta * p.sigma,
                          float(gamma), p.r, store_slot, row_offset[:-1].copy(), row_len,
                          n_start, out_a, out_b, out_c, blow, float(guard))
    blow_time = np.where(blow >= 0, grid[np.maximum(blow, 0)], np.nan)
    return RiccatiSolution(z, grid, grid[store_idx], row_offset[:-1], row_len,
                           out_a, out_b, out_c, blow_time)


def _refine(grid):
    mid = 0.5 * (grid[1:] + grid[:-1])
    out = np.empty(2 * grid.size - 1)
    out[0::2] = grid
    out[1::2] = mid
    return out


def solve_riccati(params: ModelParams, u: UtilityParams, r_curve: VarianceCurve, z, grid,
                  times=None, row_len=None, richardson=False, rtol=1e-8,
                  max_refine=3) -> RiccatiSolution:
    """Solve the Riccati system on ``grid`` (ending at T) for every entry of ``z``.

    Values are stored at ``times`` (default: the whole grid).  With
    ``richardson=True`` the solve is repeated on a halved grid and the grid is
    refined until the stored values agree to ``rtol``; the estimate is kept
    in ``error_estimate``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing with at least two points")
    if times is None:
        idx = np.arange(grid.size)
    else:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        idx = np.array([int(np.argmin(np.abs(grid - t))) for t in times], dtype=np.int64)
        if np.any(np.abs(grid[idx] - times) > 1e-12 * max(1.0, grid[-1])):
            raise ValueError("requested times must lie on the grid")
    sol = _sweep(params, u.gamma, r_curve, z, grid, idx, row_len)
    if not richardson:
        return sol
    for _ in range(max_refine):
        g2 = _refine(grid)
        sol2 = _sweep(params, u.gamma, r_curve, z, g2, 2 * idx, row_len)
        scale = np.maximum(1.0, np.abs(sol2.a_flat) + np.abs(sol2.b_flat) + np.abs(sol2.c_flat))
        with np.errstate(invalid="ignore"):
            diff = (np.abs(sol2.a_flat - sol.a_flat) + np.abs(sol2.b_flat - sol.b_flat)
                    + np.abs(sol2.c_flat - sol.c_flat)) / scale
        err = float(np.nanmax(diff)) / 15.0 if diff.size else 0.0
        sol2.error_estimate = err
        sol, grid, idx = sol2, g2, 2 * idx
        if err <= rtol:
            break
    return sol


def eval_H(sol: RiccatiSolution, t: float, zeta, pi):
    """zeta^z exp(A + B pi + C pi^2/2) for every stored node.

    Returns an array of shape ``broadcast(zeta, pi).shape + (len(z),)``,
    squeezed over z when the solution holds a single exponent.
    """
    zeta = np.asarray(zeta, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if np.any(zeta <= 0):
        raise ValueError("zeta must be positive")
    z, a, b, c = sol.coefficients(t)
    if np.any(np.isfinite(sol.blow_time[: z.size]) & (sol.blow_time[: z.size] >= t - 1e-14)):
        raise RiccatiBlowUp(f"Riccati solution diverged before t={t}")
    lz = np.log(zeta)[..., None]
    p = np.broadcast_to(pi, np.broadcast(zeta, pi).shape)[..., None]
    if t == sol.horizon:
        out = np.exp(z * lz) * np.ones_like(p)
    else:
        out = np.exp(z * lz + a + b * p + 0.5 * c * p * p)
    if z.size == 1 and sol.z.size == 1:
        out = out[..., 0]
    return out[()] if out.ndim == 0 else out


def solve_homogeneous(params: ModelParams, u: UtilityParams, z, grid):
    """Homogeneous companion system for (B0, C0), RK4 backward from T.

    C0' = ((1-rho^2)/z - rho^2) sigma_x^2 C0^2 + 2 (lam + (1+z) rho sigma_x) C0 - z(z+1)
    B0' = (lam + (1+z) rho sigma_x + ((1-rho^2)/z - rho^2) sigma_x^2 C0) B0
          - (lam x_bar + (1 + z gamma) beta sigma rho sigma_x) C0 + z (1 + z gamma) beta sigma
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(z == 0):
        raise ValueError("the homogeneous transform is undefined at z = 0")
    grid = np.asarray(grid, dtype=float)
    p, g = params, u.gamma
    q = ((1.0 - p.rho ** 2) / z - p.rho ** 2) * p.sigma_x ** 2
    lin = p.lam + (1.0 + z) * p.rho * p.sigma_x
    src_c = -z * (z + 1.0)
    drift_c = p.lam * p.x_bar + (1.0 + z * g) * p.beta * p.sigma * p.rho * p.sigma_x
    src_b = z * (1.0 + z * g) * p.beta * p.sigma

    def rhs(B, C):
        return (lin + q * C) * B - drift_c * C + src_b, q * C * C + 2.0 * lin * C + src_c

    n = grid.size
    bo = np.zeros((n, z.size), complex)
    co = np.zeros((n, z.size), complex)
    B = np.zeros(z.size, complex)
    C = np.zeros(z.size, complex)
    for i in range(n - 2, -1, -1):
        h = grid[i] - grid[i + 1]
        b1, c1 = rhs(B, C)
        b2, c2 = rhs(B + 0.5 * h * b1, C + 0.5 * h * c1)
        b3, c3 = rhs(B + 0.5 * h * b2, C + 0.5 * h * c2)
        b4, c4 = rhs(B + h * b3, C + h * c3)
        B = B + h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
        C = C + h / 6.0 * (c1 + 2 * c2 + 2 * c3 + c4)
        if np.any(~(np.abs(C) <= BLOWUP_GUARD)):
            raise RiccatiBlowUp(f"homogeneous Riccati solution diverged at t={grid[i]:.6g}")
        bo[i], co[i] = B, C
    return bo, co


def homogeneous_closed_form(params: ModelParams, u: UtilityParams, z, tau):
    """(B0, C0) for sigma_x = 0, where the companion system is linear."""
    if params.sigma_x != 0.0:
        raise ValueError("closed form requires sigma_x = 0")
    z = np.asarray(z, dtype=complex)
    tau = np.asarray(tau, dtype=float)
    lam = params.lam
    k = z * (z + 1.0)
    kb = z * (1.0 + z * u.gamma) * params.beta * params.sigma
    if lam == 0.0:
        co = k * tau
        bo = -kb * tau
    else:
        e1 = -np.expm1(-lam * tau) / lam
        co = k * (-np.expm1(-2.0 * lam * tau) / (2.0 * lam))
        # dB0/dtau = -lam B0 + lam x_bar C0 - kb
        bo = -kb * e1 + 0.5 * params.x_bar * k * e1 * (-np.expm1(-lam * tau))
    return bo, co


def transform_homogeneous(bo, co, r_vals, z):
    """C = C0 / (1 + C0 R / z), B = B0 / (1 + C0 R / z)."""
    d = 1.0 + co * np.asarray(r_vals)[..., None] / np.asarray(z)
    return bo / d, co / d


def q_generator(params: ModelParams, u: UtilityParams, r_t: float, zeta, pi):
    """Drift and diffusion coefficients of (zeta, pi) under Q at one time."""
    p, g = params, u.gamma
    bs = p.beta * p.sigma
    s = r_t + p.rho * p.sigma_x
    a_zeta = p.r * (g - 1.0) + 0.5 * g * (g + 1.0) * bs * bs - (g + 1.0) * bs * pi + pi * pi
    q = g * bs - pi
    m_pi = p.lam * (p.x_bar - pi) + s * (bs - pi)
    return a_zeta, q, m_pi, s


def pde_residual(params: ModelParams, u: UtilityParams, r_curve: VarianceCurve, t: float,
                 zeta: float, pi: float, z: complex, h: float = 1e-4, steps: int = 4000):
    """Relative residual |L H| / |H| of the pricing PDE by central differences.

    Steps: h in t, relative h in zeta, absolute h in pi.  Spatial differences
    are taken in extended precision so round-off stays below O(h^2).
    """
    T = r_curve.horizon
    if not h < t < T - h:
        raise ValueError("t must lie at least h inside (0, T)")
    grid = make_grid(T, steps, [t - h, t, t + h])
    sol = solve_riccati(params, u, r_curve, np.array([z]), grid, times=[t - h, t, t + h])
    if sol.blew_up:
        raise RiccatiBlowUp("Riccati solution diverged")
    ld = np.clongdouble
    zl = ld(z)

    def H(m, zt, p):
        _, a, b, c = sol.row(m)
        return np.exp(zl * np.log(np.longdouble(zt)) + ld(a[0]) + ld(b[0]) * p + ld(0.5) * ld(c[0]) * p * p)

    zt = np.longdouble(zeta)
    p = np.longdouble(pi)
    hz = np.longdouble(h) * zt
    hp = np.longdouble(h)
    h0 = H(1, zt, p)
    dt = (H(2, zt, p) - H(0, zt, p)) / (2 * np.longdouble(h))
    dz = (H(1, zt + hz, p) - H(1, zt - hz, p)) / (2 * hz)
    dzz = (H(1, zt + hz, p) - 2 * h0 + H(1, zt - hz, p)) / (hz * hz)
    dp = (H(1, zt, p + hp) - H(1, zt, p - hp)) / (2 * hp)
    dpp = (H(1, zt, p + hp) - 2 * h0 + H(1, zt, p - hp)) / (hp * hp)
    dzp = (H(1, zt + hz, p + hp) - H(1, zt + hz, p - hp) - H(1, zt - hz, p + hp)
           + H(1, zt - hz, p - hp)) / (4 * hz * hp)
    a_zeta, q, m_pi, s = (np.longdouble(v) for v in q_generator(params, u, float(r_curve(t)), zeta, pi))
    res = (dt + a_zeta * zt * dz + 0.5 * q * q * zt * zt * dzz + m_pi * dp + 0.5 * s * s * dpp
           + q * s * zt * dzp)
    return float(abs(res) / abs(h0))
