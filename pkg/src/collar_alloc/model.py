"""Exogenous parameters, the collar flow schedule and power utility.

All value types are frozen dataclasses.  Construction goes through the same
checks as :func:`validate_config`, so an invalid object can not exist.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np


class ConfigError(ValueError):
    """Raised with the full list of violated invariants."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _raise_if(errors):
    if errors:
        raise ConfigError(errors)


@dataclass(frozen=True)
class ModelParams:
    """Market and latent-factor coefficients.

    The market price of risk X follows dX = lam (x_bar - X) dt + sigma_x dZ^X,
    with corr(dZ^S, dZ^X) = rho, and the stock drift is mu = r + sigma X.
    """

    r: float = 0.0
    sigma: float = 0.15
    lam: float = 0.0
    x_bar: float = 0.0
    sigma_x: float = 0.0
    rho: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        _raise_if(self.violations())

    def violations(self):
        errs = []
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                errs.append(f"{f.name} must be a finite number")
        if errs:
            return errs
        if not self.sigma > 0:
            errs.append("sigma must be positive")
        if self.lam < 0:
            errs.append("lambda must be non-negative")
        if self.sigma_x < 0:
            errs.append("sigma_x must be non-negative")
        if not -1.0 <= self.rho <= 1.0:
            errs.append("rho must lie in [-1, 1]")
        return errs

    def drift(self, x):
        """Stock drift mu = r + sigma * x."""
        return self.r + self.sigma * np.asarray(x, dtype=float)

    def loading(self, r_var):
        """Innovation loading of the filter mean, R_t + rho sigma_x."""
        return r_var + self.rho * self.sigma_x


@dataclass(frozen=True)
class FlowSchedule:
    """Collar fund-flow response to the terminal tracking error.

    f = f_low below eta_low, linear with slope psi on [eta_low, eta_high),
    f_high above.  ``psi == 0`` is the degenerate flat collar.
    """

    f_low: float
    psi: float
    eta_low: float
    eta_high: float

    def __post_init__(self):
        _raise_if(self.violations())

    @classmethod
    def from_levels(cls, f_low, f_high, eta_low, eta_high):
        if eta_high == eta_low:
            if f_high != f_low:
                raise ConfigError(["eta_low = eta_high requires f_high = f_low (flat collar)"])
            return cls(f_low, 0.0, eta_low, eta_high)
        if eta_high < eta_low:
            raise ConfigError(["eta_high must be >= eta_low"])
        return cls(f_low, (f_high - f_low) / (eta_high - eta_low), eta_low, eta_high)

    def violations(self):
        errs = []
        for name in ("f_low", "psi", "eta_low", "eta_high"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                errs.append(f"{name} must be a finite number")
        if errs:
            return errs
        if not self.f_low > 0:
            errs.append("f_low must be positive")
        if self.psi < 0:
            errs.append("psi must be positive")
        if self.eta_high < self.eta_low:
            errs.append("eta_high must be >= eta_low")
        return errs

    @property
    def f_high(self) -> float:
        return self.f_low + self.psi * (self.eta_high - self.eta_low)

    @property
    def is_flat(self) -> bool:
        return self.psi == 0.0 or self.eta_high == self.eta_low

    def flow_rate(self, tracking_error):
        te = np.asarray(tracking_error, dtype=float)
        out = self.f_low + self.psi * (np.clip(te, self.eta_low, self.eta_high) - self.eta_low)
        return out if out.ndim else float(out)


def flow_rate(schedule: FlowSchedule, tracking_error):
    return schedule.flow_rate(tracking_error)


@dataclass(frozen=True)
class UtilityParams:
    """Power utility u(x) = x^(1-gamma)/(1-gamma)."""

    gamma: float

    def __post_init__(self):
        _raise_if(self.violations())

    def violations(self):
        g = self.gamma
        if not isinstance(g, (int, float)) or not math.isfinite(g):
            return ["gamma must be a finite number"]
        errs = []
        if not g > 0:
            errs.append("gamma must be positive")
        if g == 1:
            errs.append("gamma must differ from 1")
        return errs

    def __call__(self, x):
        return utility(self, x)


def utility(u: UtilityParams, x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("utility is defined for positive arguments only")
    g = u.gamma
    out = x ** (1.0 - g) / (1.0 - g)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class InitialConditions:
    w0: float = 1.0
    pi0: float = 0.0
    r0: float = 0.0
    horizon_T: float = 1.0

    def __post_init__(self):
        _raise_if(self.violations())

    def violations(self):
        errs = []
        for name in ("w0", "pi0", "r0", "horizon_T"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                errs.append(f"{name} must be a finite number")
        if errs:
            return errs
        if not self.w0 > 0:
            errs.append("w0 must be positive")
        if self.r0 < 0:
            errs.append("r0 must be non-negative")
        if not self.horizon_T > 0:
            errs.append("horizon_T must be positive")
        return errs

    @property
    def y0(self) -> float:
        # benchmark starts at the manager's wealth
        return self.w0


@dataclass(frozen=True)
class Numerics:
    """Discretization knobs shared by the analytic pipeline."""

    riccati_steps: int = 2000
    strip_offset: float = 0.75
    strip_min_offset: float = 0.04
    strip_max_relvar: float = 2.0
    quad_nodes: int = 4096
    tail_tol: float = 1e-12
    u_cap: float = 2000.0
    y_tol: float = 1e-6

    def violations(self):
        errs = []
        if not (isinstance(self.riccati_steps, int) and self.riccati_steps >= 10):
            errs.append("riccati_steps must be an integer >= 10")
        if not (isinstance(self.quad_nodes, int) and self.quad_nodes >= 16):
            errs.append("quad_nodes must be an integer >= 16")
        if not self.strip_offset > 0:
            errs.append("strip_offset must be positive")
        if not 0 < self.strip_min_offset <= self.strip_offset:
            errs.append("strip_min_offset must lie in (0, strip_offset]")
        if not self.strip_max_relvar > 0:
            errs.append("strip_max_relvar must be positive")
        if not 0 < self.tail_tol < 1:
            errs.append("tail_tol must lie in (0, 1)")
        if not self.u_cap > 0:
            errs.append("u_cap must be positive")
        if not 0 < self.y_tol < 1:
            errs.append("y_tol must lie in (0, 1)")
        return errs


@dataclass(frozen=True)
class Config:
    model: ModelParams
    schedule: FlowSchedule
    utility: UtilityParams
    initial: InitialConditions
    numerics: Numerics = field(default_factory=Numerics)
    label: str = ""

    def with_gamma(self, gamma):
        return replace(self, utility=UtilityParams(gamma))

    def myopic(self):
        """Same economy seen by a manager who treats pi0 as exact."""
        return replace(
            self,
            model=replace(self.model, sigma_x=0.0),
            initial=replace(self.initial, r0=0.0),
            label=(self.label + "-myopic") if self.label else "myopic",
        )

    def to_dict(self):
        d = {
            "r": self.model.r,
            "sigma": self.model.sigma,
            "lambda": self.model.lam,
            "x_bar": self.model.x_bar,
            "sigma_x": self.model.sigma_x,
            "rho": self.model.rho,
            "beta": self.model.beta,
            "gamma": self.utility.gamma,
            "f_low": self.schedule.f_low,
            "psi": self.schedule.psi,
            "eta_low": self.schedule.eta_low,
            "eta_high": self.schedule.eta_high,
            "w0": self.initial.w0,
            "pi0": self.initial.pi0,
            "r0": self.initial.r0,
            "horizon_T": self.initial.horizon_T,
        }
        for f in fields(self.numerics):
            d[f.name] = getattr(self.numerics, f.name)
        if self.label:
            d["label"] = self.label
        return d


_MODEL_KEYS = {"r": "r", "sigma": "sigma", "lambda": "lam", "x_bar": "x_bar",
               "sigma_x": "sigma_x", "rho": "rho", "beta": "beta"}
_INITIAL_KEYS = ("w0", "pi0", "r0", "horizon_T")
_NUMERIC_KEYS = {f.name: f.type for f in fields(Numerics)}
_REQUIRED = ("sigma", "gamma", "f_low", "eta_low", "eta_high")


def _num(raw, key, errs, default=None):
    v = raw.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errs.append(f"{key} must be a number")
        return None
    return float(v)


def validate_config(raw: Mapping[str, Any]) -> Config:
    """Validate a flat key/value mapping and return a :class:`Config`.

    Every violated invariant is collected before raising :class:`ConfigError`.
    """
    errs = []
    known = set(_MODEL_KEYS) | set(_INITIAL_KEYS) | set(_NUMERIC_KEYS) | {
        "gamma", "f_low", "f_high", "psi", "eta_low", "eta_high", "y0", "label"}
    for k in raw:
        if k not in known:
            errs.append(f"unknown key {k!r}")
    for k in _REQUIRED:
        if k not in raw:
            errs.append(f"{k} is required")

    mvals = {}
    for key, attr in _MODEL_KEYS.items():
        v = _num(raw, key, errs)
        if v is not None:
            mvals[attr] = v
    gamma = _num(raw, "gamma", errs)
    f_low = _num(raw, "f_low", errs)
    eta_low = _num(raw, "eta_low", errs)
    eta_high = _num(raw, "eta_high", errs)
    f_high = _num(raw, "f_high", errs)
    psi = _num(raw, "psi", errs)
    ivals = {}
    for key in _INITIAL_KEYS:
        v = _num(raw, key, errs)
        if v is not None:
            ivals[key] = v

    # collect violations of every group without stopping at the first
    model = schedule = ut = initial = None
    try:
        model = ModelParams(**mvals)
    except ConfigError as e:
        errs.extend(e.errors)
    except TypeError as e:
        errs.append(str(e))
    if gamma is not None:
        try:
            ut = UtilityParams(gamma)
        except ConfigError as e:
            errs.extend(e.errors)
    if f_high is not None and psi is not None:
        errs.append("give exactly one of f_high and psi")
    elif f_high is None and psi is None:
        errs.append("one of f_high and psi is required")
    elif None not in (f_low, eta_low, eta_high):
        try:
            if f_high is not None:
                if f_high < f_low:
                    errs.append("f_high must be >= f_low")
                schedule = FlowSchedule.from_levels(f_low, f_high, eta_low, eta_high)
            else:
                if eta_low == eta_high and psi != 0:
                    errs.append("eta_low = eta_high requires psi = 0 (flat collar)")
                schedule = FlowSchedule(f_low, psi, eta_low, eta_high)
        except ConfigError as e:
            errs.extend(e.errors)
    try:
        initial = InitialConditions(**ivals)
    except ConfigError as e:
        errs.extend(e.errors)
    if "y0" in raw and initial is not None and raw["y0"] != initial.w0:
        errs.append("y0 must equal w0")

    nvals = {}
    for key, typ in _NUMERIC_KEYS.items():
        if key in raw:
            v = raw[key]
            if typ in ("int", int):
                if isinstance(v, float) and v.is_integer():
                    v = int(v)
                if not isinstance(v, int) or isinstance(v, bool):
                    errs.append(f"{key} must be an integer")
                    continue
            else:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    errs.append(f"{key} must be a number")
                    continue
                v = float(v)
            nvals[key] = v
    numerics = Numerics(**nvals)
    errs.extend(numerics.violations())
    label = raw.get("label", "")
    if not isinstance(label, str):
        errs.append("label must be a string")
        label = ""

    _raise_if(errs)
    return Config(model, schedule, ut, initial, numerics, label)


def load_config(path, overrides: Mapping[str, Any] | None = None) -> Config:
    """Read a JSON config file, apply overrides, validate."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    if overrides:
        raw = {**raw, **overrides}
        if "psi" in overrides:
            raw.pop("f_high", None)
        elif "f_high" in overrides:
            raw.pop("psi", None)
    return validate_config(raw)
