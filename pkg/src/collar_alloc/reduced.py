"""Exact one-factor valuation when the latent drift is a constant (lambda = sigma_x = 0).

Then q_t = (pi_t - beta sigma) / R_t is a Q-Brownian motion and

    ln zeta_T = ln zeta_t + c0 + a1 Z - a2 Z^2,   Z ~ N(0, 1),

with a2 = R_T tau / 2.  V_t is therefore a one-dimensional Gaussian
integral of the piecewise target: the power and flat pieces integrate in
closed form, the band piece by Gauss-Legendre.  The point-mass terms of the
jump at zeta3 enter the partials through the roots of the quadratic.

Used as an independent check of the Fourier engine and as the fast valuer
for path-wise replication (millions of strategy evaluations).
"""
from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr

from .concavify import ConcavifiedPayoff, terminal_wealth
from .fourier import maturity_partials
from .model import ModelParams, UtilityParams

_SQRT2PI = math.sqrt(2 * math.pi)


def _pdf(x):
    return np.exp(-0.5 * x * x) / _SQRT2PI


class ReducedValuation:
    """V_t(zeta, pi) and its partials for a constant latent drift."""

    def __init__(self, params: ModelParams, u: UtilityParams, r0: float, horizon: float,
                 payoff: ConcavifiedPayoff, band_nodes: int = 48):
        if params.lam != 0 or params.sigma_x != 0:
            raise ValueError("reduced valuation needs lambda = 0 and sigma_x = 0")
        self.params, self.utility, self.payoff = params, u, payoff
        self.r0, self.horizon = float(r0), float(horizon)
        self._gl = leggauss(band_nodes)
        g = u.gamma
        lz = [math.log(payoff.zeta1), math.log(payoff.zeta2), math.log(payoff.zeta3)]
        self._levels = lz
        # jump of V_T across each threshold, right minus left
        eps = 1e-13
        self._jumps = [0.0 if i and x == lz[i - 1] else
                       float(terminal_wealth(payoff, math.exp(x) * (1 + eps))
                             - terminal_wealth(payoff, math.exp(x) * (1 - eps)))
                       for i, x in enumerate(lz)]
        self._cheb = payoff.band_chebyshev
        self._dcheb = self._cheb.deriv() if self._cheb is not None else None
        self._kappa = (g - 1) * (params.r + 0.5 * (params.beta * params.sigma) ** 2)

    def r_var(self, t):
        return self.r0 / (1 + self.r0 * t)

    def _quadratic(self, t, pi):
        """(c0, a1, a2, dc0/dpi, da1/dpi) of ln zeta_T - ln zeta_t in Z."""
        p, g = self.params, self.utility.gamma
        tau = self.horizon - t
        bs = p.beta * p.sigma
        rt = np.sqrt(tau)
        if self.r0 == 0:
            drift = p.r * (g - 1) + 0.5 * g * bs * bs - bs * pi + 0.5 * pi * pi
            return (drift * tau, rt * (g * bs - pi), 0.0, (pi - bs) * tau,
                    np.full(np.shape(pi), -rt))
        r_t, r_T = self.r_var(t), self.r_var(self.horizon)
        q = (pi - bs) / r_t
        ln_ratio = math.log((1 + self.r0 * self.horizon) / (1 + self.r0 * t))
        c0 = 0.5 * (r_t - r_T) * q * q + self._kappa * tau + 0.5 * ln_ratio
        a1 = rt * ((g - 1) * bs - r_T * q)
        return c0, a1, 0.5 * r_T * tau, (r_t - r_T) * q / r_t, np.full(np.shape(pi), -rt * r_T / r_t)

    def _intervals(self, l0, a1, a2, level):
        """Z-set where x(Z) >= level as [lo, hi] (quadratic) or a half-line (linear)."""
        if a2 > 0:
            zs = a1 / (2 * a2)
            xmax = l0 + a1 * a1 / (4 * a2)
            d = np.sqrt(np.maximum(xmax - level, 0.0) / a2)
            return zs - d, zs + d, d
        with np.errstate(divide="ignore", invalid="ignore"):
            root = (level - l0) / a1
        lo = np.where(a1 > 0, root, -np.inf)
        hi = np.where(a1 > 0, np.inf, root)
        return lo, hi, None

    def evaluate(self, t: float, zeta, pi):
        """(V, dV/dzeta, dV/dpi) at time t for broadcastable state arrays."""
        zeta = np.asarray(zeta, dtype=float)
        pi = np.asarray(pi, dtype=float)
        shape = np.broadcast(zeta, pi).shape
        zeta = np.broadcast_to(zeta, shape).ravel()
        pi = np.broadcast_to(pi, shape).ravel()
        if self.horizon - t <= 1e-14 * self.horizon:
            v, dz = maturity_partials(self.payoff, zeta)
            return v.reshape(shape), dz.reshape(shape), np.zeros(shape)
        pay, g = self.payoff, self.utility.gamma
        c0, a1, a2, dc0, da1 = self._quadratic(t, pi)
        l0 = np.log(zeta) + c0
        a1 = np.broadcast_to(a1, l0.shape)
        dc0 = np.broadcast_to(dc0, l0.shape)
        da1 = np.broadcast_to(da1, l0.shape)
        if 1 - 2 * a2 / g <= 0:
            raise ValueError("zeta_T^(-1/gamma) has no finite Q-mean at this horizon")
        # upper-set boundaries for each threshold; region k lies between levels k-1 and k
        sets = [self._intervals(l0, a1, a2, lv) for lv in self._levels]
        v = np.zeros(l0.size)
        d_l = np.zeros(l0.size)
        d_p = np.zeros(l0.size)

        def region(k):
            """Z-intervals of x in [level_{k-1}, level_k)."""
            if a2 > 0:
                lo_out, hi_out = ((np.full(l0.size, -np.inf), np.full(l0.size, np.inf)) if k == 0
                                  else sets[k - 1][:2])
                if k == 3:
                    return [(lo_out, hi_out)]
                lo_in, hi_in = sets[k][:2]
                return [(lo_out, lo_in), (hi_in, hi_out)]
            inc = a1 > 0
            lo_b = np.full(l0.size, -np.inf) if k == 0 else sets[k - 1][0]
            hi_b = np.full(l0.size, np.inf) if k == 0 else sets[k - 1][1]
            if k == 3:
                return [(lo_b, hi_b)]
            # for a1 > 0 the region is [root_{k-1}, root_k), else (root_k, root_{k-1}]
            lo_k, hi_k = sets[k][0], sets[k][1]
            lo = np.where(inc, lo_b, hi_k)
            hi = np.where(inc, lo_k, hi_b)
            return [(lo, hi)]

        # power pieces zeta < zeta1 and zeta >= zeta3
        pw = 1 - 2 * a2 / g
        m = a1 / (g * pw)
        scale = np.exp(-l0 / g + 0.5 * pw * m * m) / math.sqrt(pw)
        sp = math.sqrt(pw)
        for k, K in ((0, pay.k_high), (3, pay.k_low)):
            for lo, hi in region(k):
                yl, yh = sp * (lo + m), sp * (hi + m)
                i0 = np.clip(ndtr(yh) - ndtr(yl), 0.0, None)
                i1 = (_pdf(yl) - _pdf(yh)) / sp - m * i0
                v += K * scale * i0
                d_l += -K * scale * i0 / g
                d_p += -K * scale * (dc0 * i0 + da1 * i1) / g
        if not pay.schedule.is_flat:
            e_h = math.exp(pay.schedule.eta_high)
            for lo, hi in region(1):
                v += e_h * np.clip(ndtr(hi) - ndtr(lo), 0.0, None)
            if pay.has_band_piece:
                xg, wg = self._gl
                for lo, hi in region(2):
                    width = np.maximum(hi - lo, 0.0)
                    zq = lo[:, None] + 0.5 * width[:, None] * (xg[None, :] + 1)
                    wq = 0.5 * width[:, None] * wg[None, :] * _pdf(zq)
                    xq = l0[:, None] + a1[:, None] * zq - a2 * zq * zq
                    xq = np.clip(xq, *self._cheb.domain)
                    hv = self._cheb(xq)
                    dh = self._dcheb(xq)
                    v += np.sum(wq * hv, axis=1)
                    d_l += np.sum(wq * dh, axis=1)
                    d_p += np.sum(wq * dh * (dc0[:, None] + da1[:, None] * zq), axis=1)
        # point masses of dV_T at the thresholds
        for (lo, hi, d), jump in zip(sets, self._jumps):
            if jump == 0:
                continue
            if a2 > 0:
                ok = d > 0
                dd = np.where(ok, d, 1.0)
                for zb in (lo, hi):
                    dens = np.where(ok, _pdf(zb) / (2 * a2 * dd), 0.0)
                    d_l += jump * dens
                    d_p += jump * dens * (dc0 + da1 * zb)
            else:
                zb = np.where(a1 > 0, lo, hi)
                dens = _pdf(zb) / np.abs(a1)
                d_l += jump * dens
                d_p += jump * dens * (dc0 + da1 * zb)
        return v.reshape(shape), (d_l / zeta).reshape(shape), d_p.reshape(shape)

    def relative_wealth(self, t, zeta, pi):
        v = self.evaluate(t, zeta, pi)[0]
        return v[()] if v.ndim == 0 else v
