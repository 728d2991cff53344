import numpy as np
import pytest

from collar_alloc.figures import shipped_config
from collar_alloc.model import ModelParams, UtilityParams
from collar_alloc.strategy import (StrategyError, merton_level, myopic_theta, optimal_theta,
                                   strategy_curve, theta_from_partials)


def test_merton_level():
    m = ModelParams(r=0.03, sigma=0.2)
    assert merton_level(m, UtilityParams(2.0), 0.5) == pytest.approx(0.5 / (2.0 * 0.2))


def test_theta_of_power_value_is_merton():
    m, u = ModelParams(sigma=0.25, sigma_x=0.1, rho=0.3), UtilityParams(3.0)
    zeta = np.geomspace(0.2, 5, 9)
    v = 1.7 * zeta ** (-1 / 3.0)
    vz = -v / (3.0 * zeta)
    th = theta_from_partials(m, u, 0.1, zeta, 0.4, v, vz, np.zeros_like(v))
    np.testing.assert_allclose(th, 0.4 / (3.0 * 0.25), rtol=1e-14)


def test_hedging_term_uses_loading():
    m, u = ModelParams(sigma=0.2, sigma_x=0.1, rho=-0.5), UtilityParams(2.0)
    base = theta_from_partials(m, u, 0.3, 1.0, 0.4, 1.0, -0.5, 0.0)
    hedged = theta_from_partials(m, u, 0.3, 1.0, 0.4, 1.0, -0.5, 0.1)
    assert hedged - base == pytest.approx(0.1 * (0.3 - 0.05) / 0.2)


def test_theta_rejects_bad_values():
    m, u = ModelParams(sigma=0.2), UtilityParams(2.0)
    with pytest.raises(StrategyError):
        theta_from_partials(m, u, 0.1, 1.0, 0.4, -1.0, 0.1, 0.0)
    with pytest.raises(StrategyError):
        theta_from_partials(m, u, 0.1, 1.0, 0.4, 1.0, np.nan, 0.0)


def test_zeta_for_return_inverts(economies):
    e = economies.get("fig2_b_gamma2")
    rr = np.array([-0.3, 0.0, 0.25])
    z = e.zeta_for_return(0.25, e.pi0, rr)
    np.testing.assert_allclose(np.log(e.relative_wealth(0.25, z, np.full(3, e.pi0))), rr, atol=1e-10)


def test_curve_structure(economies):
    e = economies.get("fig2_b_gamma2")
    my = economies.get("fig2_b_gamma2", myopic=True)
    assert my.r_curve(0.25) == 0.0
    pts = strategy_curve(e, my, 0.25, n=41)
    rr = np.array([p.relative_return for p in pts])
    assert np.all(np.diff(rr) > 0) and rr[0] <= -0.5 and rr[-1] >= 0.5
    p = pts[len(pts) // 2]
    assert p.theta == pytest.approx(optimal_theta(0.25, p.zeta, e.pi0, e), rel=1e-12)
    zm = my.zeta_for_return(0.25, e.pi0, [p.relative_return])[0]
    assert p.theta_myopic == pytest.approx(myopic_theta(0.25, zm, e.pi0, my), rel=1e-8)
    assert p.theta_merton == pytest.approx(merton_level(e.params, e.utility, e.pi0))


def test_calibrated_start_value(economies):
    e = economies.get("fig2_b_gamma2")
    assert e.value_at_start(e.payoff) == pytest.approx(1.0, abs=1e-9)
    assert e.payoff.y == pytest.approx(0.967448, rel=1e-5)


def test_myopic_economy_prices_without_learning(economies):
    cfg = shipped_config("fig2_b_gamma2").myopic()
    e = economies.get("fig2_b_gamma2", myopic=True)
    assert e.config == cfg
    assert np.isfinite(e.theta(0.25, 1.0, e.pi0))
