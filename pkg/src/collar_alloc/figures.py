"""Figure drivers: the flow schedule curve and the four strategy panels."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .concavify import condition_a
from .model import Config, load_config
from .strategy import Economy, StrategyPoint, strategy_curve

PANELS = ("fig2_a_gamma0.8", "fig2_a_gamma2", "fig2_b_gamma0.8", "fig2_b_gamma2")
PANEL_TIME = 0.25
BAND_POINT = 0.04
TAIL_POINT = 0.4


def shipped_config_path(name: str):
    return resources.files("collar_alloc") / "configs" / f"{name}.json"


def shipped_config(name: str, overrides=None) -> Config:
    with resources.as_file(shipped_config_path(name)) as p:
        return load_config(p, overrides)


def flow_curve(config: Config, lo=-0.3, hi=0.3, n=601):
    te = np.linspace(lo, hi, n)
    return te, config.schedule.flow_rate(te)


@dataclass
class Panel:
    name: str
    config: Config
    economy: Economy | None = None
    myopic: Economy | None = None
    points: list = field(default_factory=list)
    error: str | None = None
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return self.error is None

    def column(self, key):
        return np.array([getattr(p, key) for p in self.points])

    def at_return(self, rr, key="theta"):
        """Curve value at relative returns rr by linear interpolation."""
        x = self.column("relative_return")
        return np.interp(rr, x, self.column(key))

    def summary(self):
        out = {"name": self.name, "gamma": self.config.utility.gamma, "error": self.error}
        cond = condition_a(self.config.schedule, self.config.utility)
        out["condition_a_holds"] = cond.holds
        out["condition_a_lhs"] = cond.lhs
        if self.economy is not None:
            out.update(self.economy.payoff.summary())
        return out


def build_panel(name: str, config: Config, t: float = PANEL_TIME, n: int = 201) -> Panel:
    """Calibrate the economy and its myopic twin, then trace the strategy curve.

    Failures are captured on the panel so that other panels can proceed.
    """
    panel = Panel(name, config)
    start = time.perf_counter()
    try:
        panel.economy = Economy(config, times=[t])
        panel.myopic = Economy(config.myopic(), times=[t])
        panel.points = strategy_curve(panel.economy, panel.myopic, t, n=n)
    except Exception as exc:  # reported per panel
        panel.error = f"{type(exc).__name__}: {exc}"
    panel.elapsed = time.perf_counter() - start
    return panel


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def as_dict(self):
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def _economy_of(name):
    return name.split("_")[1]


def shape_checks(panels: dict[str, Panel], rr_grid=None) -> list[Check]:
    """Qualitative Figure-2 claims as inequalities on the computed curves."""
    if rr_grid is None:
        rr_grid = np.linspace(-0.5, 0.5, 201)
    out = []
    # risk aversion: the gamma = 2 curve lies below the gamma = 0.8 curve
    for econ in ("a", "b"):
        lo, hi = panels.get(f"fig2_{econ}_gamma2"), panels.get(f"fig2_{econ}_gamma0.8")
        name = f"risk_aversion_{econ}"
        if lo is None or hi is None or not (lo.ok and hi.ok):
            out.append(Check(name, False, "panel missing or failed"))
            continue
        gap = hi.at_return(rr_grid) - lo.at_return(rr_grid)
        out.append(Check(name, bool(np.all(gap > 0)), f"min theta(0.8) - theta(2) = {gap.min():.6g}"))
    for name, p in panels.items():
        if not p.ok:
            out.append(Check(f"panel_{name}", False, p.error))
            continue
        g = p.config.utility.gamma
        th, th0 = p.column("theta"), p.column("theta_myopic")
        diff = th - th0 if g < 1 else th0 - th
        frac = float(np.mean(diff > 0))
        out.append(Check(f"myopic_order_{name}", bool(np.all(diff > 0)),
                         f"{'theta > theta0' if g < 1 else 'theta < theta0'} at {frac:.1%} of points; "
                         f"worst margin {diff.min():.6g}"))
        left, right = p.at_return([-BAND_POINT, BAND_POINT])
        if _economy_of(name) == "a":
            ok, rel = left > right, ">"
        else:
            ok, rel = left < right, "<"
        out.append(Check(f"band_shape_{name}", bool(ok),
                         f"theta(-{BAND_POINT}) = {left:.6g} {rel}? theta(+{BAND_POINT}) = {right:.6g}"))
        th_n = p.points[0].theta_merton
        tails = p.at_return([-TAIL_POINT, TAIL_POINT], "theta_myopic")
        dev = np.abs(tails / th_n - 1)
        out.append(Check(f"far_tail_{name}", bool(np.all(dev <= 0.02)),
                         f"|theta0/theta_N - 1| at -/+{TAIL_POINT}: {dev[0]:.4g}, {dev[1]:.4g}"))
        cond = condition_a(p.config.schedule, p.config.utility)
        expect = g < 1
        out.append(Check(f"condition_a_{name}", cond.holds == expect,
                         f"lhs = {cond.lhs:.6g} (holds={cond.holds}, expected {expect})"))
    return out


def reproduce_fig2(configs: dict[str, Config] | None = None, t: float = PANEL_TIME, n: int = 201):
    """(panels, checks) for the four shipped Figure-2 configurations."""
    if configs is None:
        configs = {name: shipped_config(name) for name in PANELS}
    panels = {name: build_panel(name, cfg, t, n) for name, cfg in configs.items()}
    return panels, shape_checks(panels)


def points_table(points: list[StrategyPoint]):
    return [(p.t, p.zeta, p.relative_return, p.theta, p.theta_myopic, p.theta_merton)
            for p in points]
