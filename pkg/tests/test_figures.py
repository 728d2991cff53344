import numpy as np
import pytest

from collar_alloc.figures import (PANELS, Panel, build_panel, flow_curve, shape_checks,
                                  shipped_config)
from collar_alloc.strategy import StrategyPoint


def _synthetic(name, theta, theta0, theta_n=1.0):
    rr = np.linspace(-0.5, 0.5, len(theta))
    p = Panel(name, shipped_config(name))
    p.points = [StrategyPoint(0.25, float(r), 1.0, float(a), float(b), theta_n)
                for r, a, b in zip(rr, theta, theta0)]
    return p


def test_flow_curve_shape():
    te, f = flow_curve(shipped_config("fig1"))
    assert te.size == 601 and te[0] == -0.3 and te[-1] == 0.3
    assert f[0] == pytest.approx(0.8) and f[-1] == pytest.approx(1.5)
    assert np.all(np.diff(f) >= 0)


def test_all_panels_shipped():
    for name in PANELS:
        assert shipped_config(name).label == name


def test_shape_checks_on_synthetic_curves():
    rr = np.linspace(-0.5, 0.5, 101)
    bump = np.exp(-(rr / 0.1) ** 2)
    panels = {
        # economy a: decreasing through the band, learning above myopic at gamma < 1
        "fig2_a_gamma0.8": _synthetic("fig2_a_gamma0.8", 2 - rr + bump, 1.9 - rr + 0 * bump, 1.0),
        "fig2_a_gamma2": _synthetic("fig2_a_gamma2", 1 - rr, 1.1 - rr, 1.0),
    }
    # make the myopic tails meet the Merton level
    for p in panels.values():
        pts = p.points
        p.points = [StrategyPoint(q.t, q.relative_return, q.zeta, q.theta,
                                  1.0 if abs(q.relative_return) >= 0.39 else q.theta_myopic,
                                  q.theta_merton) for q in pts]
    checks = {c.name: c for c in shape_checks(panels)}
    assert checks["risk_aversion_a"].passed
    assert not checks["risk_aversion_b"].passed  # panels missing
    assert checks["band_shape_fig2_a_gamma0.8"].passed
    assert checks["far_tail_fig2_a_gamma2"].passed
    assert checks["condition_a_fig2_a_gamma0.8"].passed
    assert checks["condition_a_fig2_a_gamma2"].passed


def test_failed_panel_is_reported():
    cfg = shipped_config("fig2_a_gamma2", {"u_cap": 2.0})
    p = build_panel("fig2_a_gamma2", cfg)
    assert not p.ok and p.error
    checks = {c.name: c for c in shape_checks({"fig2_a_gamma2": p})}
    assert not checks["panel_fig2_a_gamma2"].passed
