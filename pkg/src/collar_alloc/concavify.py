"""Concavified optimal terminal relative wealth V_T(zeta).

The manager maximises G(V) = u(V f(ln V)) - y zeta V over V > 0, where f is
the collar schedule.  G is concave on each flat branch; inside the band it
is concave whenever gamma (f + psi)^2 > f psi.  The optimum is the piecewise
map

    zeta < zeta1           V = (f_H^{1-gamma} / (y zeta))^{1/gamma}
    zeta1 <= zeta < zeta2  V = e^{eta_H}
    zeta2 <= zeta < zeta3  V = h(zeta)      (band first-order condition)
    zeta >= zeta3          V = (f_L^{1-gamma} / (y zeta))^{1/gamma}

Under Condition A the bridging tangent of the concave envelope touches the
objective at e^{eta_H} and the band piece is empty.  Every threshold scales
like 1/y, so all geometry is computed once at y = 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import brentq

from .model import FlowSchedule, UtilityParams


class ConcavifyError(RuntimeError):
    pass


class ConditionA(NamedTuple):
    holds: bool
    lhs: float


def condition_a(schedule: FlowSchedule, u: UtilityParams) -> ConditionA:
    """Sign of g/(1-g) ((f_H+psi)/f_L)^{1-1/g} + (f_H+psi)/f_H - 1/(1-g)."""
    g = u.gamma
    fL, fH, psi = schedule.f_low, schedule.f_high, schedule.psi
    lhs = g / (1 - g) * ((fH + psi) / fL) ** (1 - 1 / g) + (fH + psi) / fH - 1 / (1 - g)
    return ConditionA(bool(lhs >= 0.0), float(lhs))


def objective(schedule: FlowSchedule, u: UtilityParams, v):
    """G(V) = u(V f(ln V))."""
    v = np.asarray(v, dtype=float)
    f = schedule.flow_rate(np.log(v))
    g = u.gamma
    return (v * f) ** (1 - g) / (1 - g)


def objective_slope(schedule: FlowSchedule, u: UtilityParams, v):
    """G'(V); inside the band (V f)^{-gamma} (f + psi), right derivative at kinks."""
    v = np.asarray(v, dtype=float)
    x = np.log(v)
    g = u.gamma
    f = schedule.flow_rate(x)
    inside = (x >= schedule.eta_low) & (x < schedule.eta_high)
    return (v * f) ** (-g) * (f + np.where(inside, schedule.psi, 0.0))


def _band_log_slope(schedule, g, x):
    """l(x) = log G'(e^x) inside the band and its first two derivatives."""
    psi = schedule.psi
    f = schedule.f_low + psi * (x - schedule.eta_low)
    l0 = -g * (x + np.log(f)) + np.log(f + psi)
    l1 = -g * (1 + psi / f) + psi / (f + psi)
    l2 = g * psi ** 2 / f ** 2 - psi ** 2 / (f + psi) ** 2
    return l0, l1, l2


def tangent_bounds(schedule: FlowSchedule, u: UtilityParams):
    """Touching points (V_lower, V_upper) of the bridging tangent when Condition A fails.

    The tangent leaves the f_L branch at V_lower < e^{eta_L} and touches the
    band at V_upper.  For a slope m = G'(V_upper) the f_L branch point is
    V_lower = (f_L^{1-gamma}/m)^{1/gamma}; V_upper is the root of the
    tangency gap G(V_u) - G(V_l) - m (V_u - V_l) on the band.
    """
    if condition_a(schedule, u).holds:
        raise ConcavifyError("Condition A holds: no interior tangent piece")
    g = u.gamma
    fL = schedule.f_low

    def lower_of(vu):
        m = float(objective_slope(schedule, u, vu))
        return (fL ** (1 - g) / m) ** (1 / g), m

    def gap(vu):
        vl, m = lower_of(vu)
        return float(objective(schedule, u, vu) - objective(schedule, u, vl) - m * (vu - vl))

    lo = math.exp(schedule.eta_low) * (1 + 1e-13)
    hi = math.exp(schedule.eta_high) * (1 - 1e-13)
    glo, ghi = gap(lo), gap(hi)
    if not (glo < 0 < ghi or ghi < 0 < glo):
        raise ConcavifyError(f"tangency gap does not change sign on the band "
                             f"(gap({lo:.6g})={glo:.3g}, gap({hi:.6g})={ghi:.3g})")
    vu = brentq(gap, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    vl, m = lower_of(vu)
    return float(vl), float(vu)


def tangency_residuals(schedule: FlowSchedule, u: UtilityParams, v_lower, v_upper):
    """(G'(V_l) - chord slope, G'(V_u) - chord slope), scaled by the chord slope."""
    chord = (objective(schedule, u, v_upper) - objective(schedule, u, v_lower)) / (v_upper - v_lower)
    return (float(objective_slope(schedule, u, v_lower) / chord - 1),
            float(objective_slope(schedule, u, v_upper) / chord - 1))


def _g_function(schedule, g, zeta):
    """g(zeta) at y = 1 whose root beyond zeta1 is zeta3 under Condition A."""
    fL, fH, eH = schedule.f_low, schedule.f_high, schedule.eta_high
    return (g * (zeta / fL) ** (1 - 1 / g) - (fH * math.exp(eH)) ** (1 - g)) / (1 - g) \
        + math.exp(eH) * zeta


@dataclass(frozen=True)
class _Geometry:
    """Threshold geometry at y = 1."""

    zeta1: float
    zeta2: float
    zeta3: float
    condition_a_holds: bool
    condition_a_lhs: float
    v_lower: float | None
    v_upper: float | None


def _geometry(schedule: FlowSchedule, u: UtilityParams) -> _Geometry:
    g = u.gamma
    fL, fH, eH, psi = schedule.f_low, schedule.f_high, schedule.eta_high, schedule.psi
    if schedule.is_flat:
        # single power law; all thresholds coincide
        zt = fL ** (1 - g) * math.exp(-g * schedule.eta_high)
        return _Geometry(zt, zt, zt, True, 0.0, None, None)
    if not g * (fL + psi) ** 2 > fL * psi or not g * (fH + psi) ** 2 > fH * psi:
        # band objective not concave; the single-tangent construction does not apply
        raise ConcavifyError("objective is not concave inside the band for this gamma")
    cond = condition_a(schedule, u)
    z1 = fH ** (1 - g) * math.exp(-g * eH)
    if cond.holds:
        lo, hi = z1, z1 * 2.0
        glo = _g_function(schedule, g, lo * (1 + 1e-14))
        while np.sign(_g_function(schedule, g, hi)) == np.sign(glo):
            hi *= 2.0
            if hi > z1 * 1e12:
                raise ConcavifyError(f"no root of g on ({z1:.6g}, {hi:.6g})")
        z3 = brentq(lambda s: _g_function(schedule, g, s), lo * (1 + 1e-14), hi,
                    xtol=1e-300, rtol=1e-15, maxiter=300)
        return _Geometry(z1, z3, z3, True, cond.lhs, None, math.exp(eH))
    vl, vu = tangent_bounds(schedule, u)
    z2 = (math.exp(eH) * fH) ** (-g) * (fH + psi)
    z3 = (fL * vl) ** (-g) * fL
    return _Geometry(z1, z2, z3, False, cond.lhs, vl, vu)


def solve_h(schedule: FlowSchedule, u: UtilityParams, y: float, zeta, v_upper=None):
    """Band first-order condition (V f)^{-gamma} (f + psi) = y zeta solved for V.

    Safeguarded Newton in x = ln V on [ln V_upper, eta_H], vectorised.
    """
    g = u.gamma
    zeta = np.asarray(zeta, dtype=float)
    target = np.log(y * zeta)
    if v_upper is None:
        v_upper = _geometry(schedule, u).v_upper
    lo = np.full(zeta.shape, math.log(v_upper))
    hi = np.full(zeta.shape, schedule.eta_high)
    l_lo = _band_log_slope(schedule, g, lo)[0]
    l_hi = _band_log_slope(schedule, g, hi)[0]
    tol = 1e-9
    if np.any(target > l_lo + tol) or np.any(target < l_hi - tol):
        raise ConcavifyError("zeta outside [zeta2, zeta3) for the band equation")
    x = lo + (hi - lo) * np.clip((l_lo - target) / np.where(l_lo > l_hi, l_lo - l_hi, 1.0), 0, 1)
    for _ in range(60):
        l0, l1, _ = _band_log_slope(schedule, g, x)
        r = l0 - target
        # l is decreasing: r > 0 means the root lies to the right
        lo = np.where(r > 0, x, lo)
        hi = np.where(r <= 0, x, hi)
        step = x - r / l1
        bad = ~((step > lo) & (step < hi))
        x_new = np.where(bad, 0.5 * (lo + hi), step)
        if np.all(np.abs(x_new - x) <= 1e-15 * (1 + np.abs(x))):
            x = x_new
            break
        x = x_new
    else:
        raise ConcavifyError("Newton iteration for h did not converge")
    l0 = _band_log_slope(schedule, g, x)[0]
    if np.any(np.abs(l0 - target) > 1e-10):
        raise ConcavifyError("h residual above 1e-10")
    out = np.exp(x)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ConcavifiedPayoff:
    """Calibrated terminal target: V_T is a piecewise function of zeta."""

    schedule: FlowSchedule
    utility: UtilityParams
    y: float
    zeta1: float
    zeta2: float
    zeta3: float
    condition_a_holds: bool
    condition_a_lhs: float
    v_lower: float | None
    v_upper: float | None

    @classmethod
    def build(cls, schedule: FlowSchedule, u: UtilityParams, y: float = 1.0):
        if not y > 0:
            raise ValueError("y must be positive")
        geo = _geometry(schedule, u)
        return cls(schedule, u, float(y), geo.zeta1 / y, geo.zeta2 / y, geo.zeta3 / y,
                   geo.condition_a_holds, geo.condition_a_lhs, geo.v_lower, geo.v_upper)

    def with_y(self, y: float) -> "ConcavifiedPayoff":
        s = self.y / y
        return replace(self, y=float(y), zeta1=self.zeta1 * s, zeta2=self.zeta2 * s,
                       zeta3=self.zeta3 * s)

    @property
    def has_band_piece(self) -> bool:
        return self.zeta3 > self.zeta2

    @property
    def k_high(self) -> float:
        g = self.utility.gamma
        return self.schedule.f_high ** (1 / g - 1) * self.y ** (-1 / g)

    @property
    def k_low(self) -> float:
        g = self.utility.gamma
        return self.schedule.f_low ** (1 / g - 1) * self.y ** (-1 / g)

    def h(self, zeta):
        return solve_h(self.schedule, self.utility, self.y, zeta, self.v_upper)

    @cached_property
    def band_chebyshev(self):
        """Chebyshev interpolant of s -> h(e^s) on [ln zeta2, ln zeta3]."""
        if not self.has_band_piece:
            return None
        a, b = math.log(self.zeta2), math.log(self.zeta3)
        return np.polynomial.Chebyshev.interpolate(lambda s: self.h(np.exp(s)), 40, domain=[a, b])

    def summary(self):
        return {
            "y": self.y, "zeta1": self.zeta1, "zeta2": self.zeta2, "zeta3": self.zeta3,
            "condition_a_holds": self.condition_a_holds, "condition_a_lhs": self.condition_a_lhs,
            "v_lower": self.v_lower, "v_upper": self.v_upper,
        }


def thresholds(schedule: FlowSchedule, u: UtilityParams, y: float):
    p = ConcavifiedPayoff.build(schedule, u, y)
    return p.zeta1, p.zeta2, p.zeta3


def terminal_wealth(payoff: ConcavifiedPayoff, zeta):
    """Optimal terminal relative wealth V_T at zeta (vectorised)."""
    zeta = np.asarray(zeta, dtype=float)
    if np.any(~(zeta > 0)):
        raise ValueError("zeta must be positive")
    g = payoff.utility.gamma
    out = np.where(zeta < payoff.zeta1, payoff.k_high * zeta ** (-1 / g),
                   payoff.k_low * zeta ** (-1 / g))
    if not payoff.schedule.is_flat:
        mid = (zeta >= payoff.zeta1) & (zeta < payoff.zeta2)
        out = np.where(mid, math.exp(payoff.schedule.eta_high), out)
        band = (zeta >= payoff.zeta2) & (zeta < payoff.zeta3)
        if np.any(band):
            out = np.array(out, dtype=float)
            out[band] = payoff.h(zeta[band])
    return out if out.ndim else float(out)


def calibrate_y(payoff: ConcavifiedPayoff, value_at_start: Callable[[ConcavifiedPayoff], float],
                tol: float = 1e-6, bracket=(1e-6, 1e6)) -> ConcavifiedPayoff:
    """Find y with value_at_start(payoff.with_y(y)) = 1.

    The start value is decreasing in y.  The bracket is widened geometrically
    until it straddles 1, then Brent's method runs in log y.
    """
    lo, hi = math.log(bracket[0]), math.log(bracket[1])

    def f(ly):
        return value_at_start(payoff.with_y(math.exp(ly))) - 1.0

    flo, fhi = f(lo), f(hi)
    for _ in range(6):
        if flo > 0 > fhi:
            break
        width = hi - lo
        # keep y representable: exp overflows beyond |ln y| ~ 709
        if flo <= 0:
            lo = max(lo - width, -700.0)
            flo = f(lo)
        if fhi >= 0:
            hi = min(hi + width, 700.0)
            fhi = f(hi)
    else:
        raise ConcavifyError(f"V_0 does not straddle 1 on y in [{math.exp(lo):.3g}, {math.exp(hi):.3g}]")
    ly = brentq(f, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=200)
    out = payoff.with_y(math.exp(ly))
    resid = value_at_start(out) - 1.0
    if abs(resid) > tol:
        raise ConcavifyError(f"calibration residual {resid:.3g} above {tol:g}")
    return out
