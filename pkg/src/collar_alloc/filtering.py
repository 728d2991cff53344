"""Kalman-Bucy filter for the latent market price of risk."""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp

from .model import ModelParams


class FilterError(RuntimeError):
    pass


@dataclass(frozen=True)
class FilterState:
    t: float
    pi: float
    r_var: float

    def __post_init__(self):
        if not self.r_var >= 0:
            raise ValueError("r_var must be non-negative")


def _variance_rhs(params: ModelParams):
    lam, sx, rho = params.lam, params.sigma_x, params.rho

    def rhs(t, r):
        s = r + rho * sx
        return sx * sx - 2.0 * lam * r - s * s

    return rhs


class VarianceCurve:
    """Conditional variance R_t on [0, T] as a callable.

    Uses the closed form R0/(R0 t + 1) when lam = sigma_x = 0, otherwise the
    dense output of an RK45 solve with tolerances 1e-10.
    """

    def __init__(self, params: ModelParams, r0: float, horizon: float):
        if r0 < 0:
            raise ValueError("r0 must be non-negative")
        self.params = params
        self.r0 = float(r0)
        self.horizon = float(horizon)
        self._closed = params.lam == 0.0 and params.sigma_x == 0.0
        self._sol = None
        if not self._closed:
            sol = solve_ivp(_variance_rhs(params), (0.0, self.horizon), [self.r0],
                            method="RK45", rtol=1e-10, atol=1e-10, dense_output=True)
            if sol.status != 0:
                t_fail = sol.t[-1] if sol.t.size else 0.0
                raise FilterError(f"variance ODE failed at t={t_fail:.6g}: {sol.message}")
            self._sol = sol.sol

    @property
    def is_closed_form(self):
        return self._closed

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self._closed:
            out = self.r0 / (self.r0 * t + 1.0)
        else:
            out = np.maximum(self._sol(np.clip(t, 0.0, self.horizon)).reshape(t.shape), 0.0)
        return out if out.ndim else float(out)

    def loading(self, t):
        """R_t + rho sigma_x."""
        return self(t) + self.params.rho * self.params.sigma_x


@lru_cache(maxsize=64)
def variance_curve(params: ModelParams, r0: float, horizon: float) -> VarianceCurve:
    """Cached :class:`VarianceCurve`; instances are read-only."""
    return VarianceCurve(params, r0, horizon)


def variance_path(params: ModelParams, r0: float, grid) -> np.ndarray:
    """R_t on ``grid`` from a direct RK45 solve of the variance ODE."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing and start at 0")
    if r0 < 0:
        raise ValueError("r0 must be non-negative")
    if grid.size == 1:
        return np.array([float(r0)])
    sol = solve_ivp(_variance_rhs(params), (0.0, grid[-1]), [float(r0)], method="RK45",
                    t_eval=grid, rtol=1e-10, atol=1e-10)
    if sol.status != 0 or sol.y.shape[1] != grid.size:
        t_fail = sol.t[-1] if sol.t.size else 0.0
        raise FilterError(f"variance ODE failed at t={t_fail:.6g}: {sol.message}")
    out = sol.y[0]
    if not np.all(np.isfinite(out)):
        bad = grid[np.argmin(np.isfinite(out))]
        raise FilterError(f"variance ODE produced a non-finite value at t={bad:.6g}")
    return np.maximum(out, 0.0)


def variance_closed_form(r0: float, t, params: ModelParams | None = None):
    """R0/(R0 t + 1), valid only for lam = 0 and sigma_x = 0."""
    if params is not None and (params.lam != 0.0 or params.sigma_x != 0.0):
        raise ValueError("closed-form variance requires lambda = 0 and sigma_x = 0")
    if r0 < 0:
        raise ValueError("r0 must be non-negative")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    out = r0 / (r0 * t + 1.0)
    return out if out.ndim else float(out)


def filter_step(state: FilterState, params: ModelParams, innovation_increment: float,
                dt: float) -> FilterState:
    """One Euler step of the filter mean; the variance follows its ODE exactly."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    s = params.loading(state.r_var)
    pi = state.pi - params.lam * (state.pi - params.x_bar) * dt + s * innovation_increment
    if params.lam == 0.0 and params.sigma_x == 0.0:
        r_next = state.r_var / (state.r_var * dt + 1.0)
    else:
        sol = solve_ivp(_variance_rhs(params), (0.0, dt), [state.r_var], method="RK45",
                        rtol=1e-10, atol=1e-10)
        if sol.status != 0:
            raise FilterError(f"variance ODE failed at t={state.t + sol.t[-1]:.6g}")
        r_next = max(float(sol.y[0, -1]), 0.0)
    return replace(state, t=state.t + dt, pi=pi, r_var=r_next)
