"""Optimal, myopic and Merton risky weights and relative-return curves."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .concavify import ConcavifiedPayoff, calibrate_y
from .filtering import variance_curve
from .fourier import (FourierEngine, FourierError, QuadratureSpec, choose_strips,
                      default_quadrature)
from .model import Config, ModelParams, UtilityParams
from .riccati import make_grid


class StrategyError(RuntimeError):
    pass


@dataclass(frozen=True)
class StrategyPoint:
    t: float
    relative_return: float
    zeta: float
    theta: float
    theta_myopic: float
    theta_merton: float


def merton_level(params: ModelParams, u: UtilityParams, pi0: float) -> float:
    """(1/gamma) (mu_0 - r) / sigma^2 with mu_0 = r + sigma pi0."""
    mu0 = params.r + params.sigma * pi0
    return (mu0 - params.r) / (u.gamma * params.sigma ** 2)


def theta_from_partials(params: ModelParams, u: UtilityParams, r_t, zeta, pi, v, v_zeta, v_pi):
    """beta + (V_zeta zeta (gamma beta sigma - pi) + V_pi (R_t + rho sigma_x)) / (sigma V)."""
    v = np.asarray(v)
    if np.any(~(v > 0)) or not (np.all(np.isfinite(v_zeta)) and np.all(np.isfinite(v_pi))):
        raise StrategyError("strategy needs V > 0 and finite partials")
    bs = params.beta * params.sigma
    s = r_t + params.rho * params.sigma_x
    return params.beta + (v_zeta * zeta * (u.gamma * bs - pi) + v_pi * s) / (params.sigma * v)


class Economy:
    """Calibrated analytic pipeline for one configuration.

    Builds the filter variance, the strips and a Fourier engine holding
    Riccati coefficients at ``times`` (t = 0 always included), then
    calibrates the Lagrange multiplier so that V_0 = 1.
    """

    def __init__(self, config: Config, times=(), calibrate=True, quad_nodes=None,
                 reference_pis=None, payoff=None):
        self.config = config
        m, u, ic, nm = config.model, config.utility, config.initial, config.numerics
        self.params, self.utility = m, u
        self.horizon = ic.horizon_T
        self.r_curve = variance_curve(m, ic.r0, ic.horizon_T)
        self.zeta0 = ic.w0 ** u.gamma
        self.pi0 = ic.pi0
        self.strips = choose_strips(m, u, self.r_curve, ic.pi0, nm.strip_offset,
                                    nm.strip_min_offset, nm.strip_max_relvar)
        times = sorted({0.0, *[float(t) for t in times if t < ic.horizon_T]})
        self.grid = make_grid(ic.horizon_T, nm.riccati_steps, times)
        pis = [ic.pi0] if reference_pis is None else list(reference_pis)
        self.quad = default_quadrature(m, u, self.r_curve, self.strips, times, pis, self.grid,
                                       nodes=quad_nodes or nm.quad_nodes,
                                       tail_tol=nm.tail_tol, u_cap=nm.u_cap)
        self.engine = FourierEngine(m, u, self.r_curve, self.strips, self.quad, times,
                                    grid=self.grid)
        base = ConcavifiedPayoff.build(config.schedule, u, 1.0) if payoff is None else payoff
        if calibrate and payoff is None:
            self.payoff = calibrate_y(base, self._unchecked_start_value, tol=nm.y_tol)
            self.value_at_start(self.payoff)
        else:
            self.payoff = base

    def _unchecked_start_value(self, payoff):
        # bracket probes at extreme y only need the sign of V_0 - 1
        return float(self.engine.evaluate(payoff, 0.0, self.zeta0, self.pi0, check=False)[0])

    def value_at_start(self, payoff: ConcavifiedPayoff) -> float:
        return float(self.engine.relative_wealth(payoff, 0.0, self.zeta0, self.pi0))

    def evaluate(self, t, zeta, pi):
        return self.engine.evaluate(self.payoff, t, zeta, pi)

    def relative_wealth(self, t, zeta, pi):
        return self.engine.relative_wealth(self.payoff, t, zeta, pi)

    def theta(self, t, zeta, pi):
        v, vz, vp, _ = self.evaluate(t, zeta, pi)
        out = theta_from_partials(self.params, self.utility, self.r_curve(t), np.asarray(zeta),
                                  np.asarray(pi), v, vz, vp)
        return out[()] if np.ndim(out) == 0 else out

    def zeta_for_return(self, t, pi, rr, lo=None, hi=None, iters=200):
        """Invert ln V_t(zeta, pi) = rr by vectorised bisection in ln zeta."""
        rr = np.atleast_1d(np.asarray(rr, dtype=float))
        lo = np.full(rr.shape, -40.0 if lo is None else lo)
        hi = np.full(rr.shape, 40.0 if hi is None else hi)
        pi_arr = np.full(rr.shape, pi)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            # bisection only needs the ordering, so the tail check is skipped
            v = self.engine.evaluate(self.payoff, t, np.exp(mid), pi_arr, check=False)[0]
            # V decreases in zeta
            above = np.log(v) > rr
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
            if np.all(hi - lo < 1e-13):
                break
        return np.exp(0.5 * (lo + hi))


def myopic_theta(t, zeta, pi_fixed, myopic_economy: Economy):
    """Weight of a manager who treats the current estimate as exact (R0 = 0, sigma_x = 0)."""
    return myopic_economy.theta(t, zeta, pi_fixed)


def optimal_theta(t, zeta, pi, economy: Economy):
    return economy.theta(t, zeta, pi)


def _lnv_span(econ, t, pi, lz):
    v = econ.relative_wealth(t, np.exp(lz), np.full(lz.shape, pi))
    return np.log(v)


def strategy_curve(economy: Economy, myopic: Economy, t: float, pi: float | None = None,
                   n: int = 201, rr_span=(-0.5, 0.5), margin=0.02):
    """Strategy points over a log-spaced zeta grid covering ``rr_span``.

    The myopic weight is taken at the same relative return by inverting the
    myopic manager's own V_t.
    """
    pi = economy.pi0 if pi is None else float(pi)
    lo_rr, hi_rr = rr_span[0] - margin, rr_span[1] + margin
    z_hi = float(economy.zeta_for_return(t, pi, [lo_rr])[0])
    z_lo = float(economy.zeta_for_return(t, pi, [hi_rr])[0])
    zetas = np.geomspace(z_lo, z_hi, n)
    pis = np.full(n, pi)
    v, vz, vp, _ = economy.evaluate(t, zetas, pis)
    rr = np.log(v)
    if rr.min() > rr_span[0] or rr.max() < rr_span[1]:
        raise StrategyError(f"grid spans relative returns [{rr.min():.3f}, {rr.max():.3f}]")
    th = theta_from_partials(economy.params, economy.utility, economy.r_curve(t), zetas, pis,
                             v, vz, vp)
    zm = myopic.zeta_for_return(t, pi, rr)
    vm, vzm, vpm, _ = myopic.evaluate(t, zm, pis)
    thm = theta_from_partials(myopic.params, myopic.utility, myopic.r_curve(t), zm, pis,
                              vm, vzm, vpm)
    th_n = merton_level(economy.params, economy.utility, pi)
    order = np.argsort(rr)
    return [StrategyPoint(float(t), float(rr[i]), float(zetas[i]), float(th[i]), float(thm[i]),
                          float(th_n)) for i in order]
