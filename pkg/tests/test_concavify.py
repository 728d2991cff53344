import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collar_alloc.concavify import (ConcavifiedPayoff, ConcavifyError, calibrate_y, condition_a,
                                    objective, tangency_residuals, tangent_bounds, terminal_wealth,
                                    thresholds)
from collar_alloc.figures import shipped_config
from collar_alloc.model import FlowSchedule, UtilityParams

FIG2 = shipped_config("fig2_a_gamma0.8").schedule


def _payoff(gamma, y=1.3, schedule=FIG2):
    return ConcavifiedPayoff.build(schedule, UtilityParams(gamma), y)


def test_condition_a_by_hand():
    fl, fh, psi = 0.8, 1.5, 0.7 / 0.16
    for g, sign in ((0.8, 1), (2.0, -1)):
        lhs = g / (1 - g) * ((fh + psi) / fl) ** (1 - 1 / g) + (fh + psi) / fh - 1 / (1 - g)
        res = condition_a(FIG2, UtilityParams(g))
        assert res.lhs == pytest.approx(lhs, rel=1e-14)
        assert np.sign(res.lhs) == sign and res.holds == (sign > 0)


@pytest.mark.parametrize("gamma", [0.5, 0.8, 2.0, 4.0])
def test_threshold_ordering_and_scaling(gamma):
    z1, z2, z3 = thresholds(FIG2, UtilityParams(gamma), 1.0)
    assert z1 < z2 <= z3
    w1, w2, w3 = thresholds(FIG2, UtilityParams(gamma), 2.5)
    np.testing.assert_allclose([w1, w2, w3], np.array([z1, z2, z3]) / 2.5, rtol=1e-14)
    pay = _payoff(gamma)
    assert pay.has_band_piece == (not pay.condition_a_holds)


@pytest.mark.parametrize("gamma", [0.5, 0.8, 2.0, 4.0])
def test_terminal_wealth_nonincreasing(gamma):
    pay = _payoff(gamma)
    z = np.geomspace(pay.zeta1 / 10, pay.zeta3 * 10, 4001)
    v = terminal_wealth(pay, z)
    assert np.all(np.diff(v) <= 1e-14)
    assert np.all(v > 0)


def test_region_values():
    pay = _payoff(2.0)
    g = 2.0
    zl = pay.zeta1 * 0.5
    assert terminal_wealth(pay, zl) == pytest.approx((1.5 ** (1 - g) / (pay.y * zl)) ** (1 / g))
    zm = 0.5 * (pay.zeta1 + pay.zeta2)
    assert terminal_wealth(pay, zm) == pytest.approx(math.exp(0.08))
    zh = pay.zeta3 * 2
    assert terminal_wealth(pay, zh) == pytest.approx((0.8 ** (1 - g) / (pay.y * zh)) ** (1 / g))


def test_jump_at_upper_threshold():
    # V_T skips the non-concave part of the objective, so it jumps at zeta3
    for g in (0.8, 2.0):
        pay = _payoff(g)
        left = terminal_wealth(pay, pay.zeta3 * (1 - 1e-12))
        right = terminal_wealth(pay, pay.zeta3 * (1 + 1e-12))
        assert left > right * (1 + 1e-3)
        # the f_H branch meets the flat piece continuously
        a = terminal_wealth(pay, pay.zeta1 * (1 - 1e-13))
        assert a == pytest.approx(math.exp(0.08), rel=1e-10)


def test_tangent_touches_objective():
    u = UtilityParams(2.0)
    vl, vu = tangent_bounds(FIG2, u)
    assert vl < math.exp(FIG2.eta_low) < vu < math.exp(FIG2.eta_high)
    r = tangency_residuals(FIG2, u, vl, vu)
    assert abs(r[0]) < 1e-10 and abs(r[1]) < 1e-10
    with pytest.raises(ConcavifyError):
        tangent_bounds(FIG2, UtilityParams(0.8))


@given(st.sampled_from([0.5, 0.8, 2.0, 3.0]), st.floats(-3.0, 3.0))
@settings(max_examples=120, deadline=None)
def test_target_maximises_lagrangian(gamma, log_zeta):
    """V_T attains the global maximum of u(V f(ln V)) - y zeta V over V > 0."""
    u = UtilityParams(gamma)
    pay = _payoff(gamma)
    zeta = pay.zeta2 * math.exp(log_zeta)
    vt = terminal_wealth(pay, zeta)
    v = np.exp(np.linspace(-4, 4, 80001))
    lag = objective(FIG2, u, v) - pay.y * zeta * v
    at = float(objective(FIG2, u, vt)) - pay.y * zeta * vt
    assert at >= lag.max() - 1e-9 * (1 + abs(at))


def test_band_first_order_condition():
    pay = _payoff(2.0)
    z = np.geomspace(pay.zeta2, pay.zeta3 * (1 - 1e-9), 25)
    v = pay.h(z)
    x = np.log(v)
    f = FIG2.flow_rate(x)
    lhs = (v * f) ** -2.0 * (f + FIG2.psi)
    np.testing.assert_allclose(lhs, pay.y * z, rtol=1e-9)
    cheb = pay.band_chebyshev(np.log(z))
    np.testing.assert_allclose(cheb, v, rtol=1e-12)


def test_flat_collar_is_scaled_merton():
    flat = FlowSchedule(1.0, 0.0, -0.08, 0.08)
    pay = ConcavifiedPayoff.build(flat, UtilityParams(2.0), 1.7)
    z = np.geomspace(0.1, 10, 50)
    np.testing.assert_allclose(terminal_wealth(pay, z), (1.7 * z) ** -0.5, rtol=1e-14)


def test_calibrate_y_synthetic():
    pay = _payoff(2.0, 1.0)
    out = calibrate_y(pay, lambda p: 2.0 / math.sqrt(p.y), tol=1e-12)
    assert out.y == pytest.approx(4.0, rel=1e-12)
    with pytest.raises(ConcavifyError):
        calibrate_y(pay, lambda p: 5.0)


def test_invalid_y():
    with pytest.raises(ValueError):
        ConcavifiedPayoff.build(FIG2, UtilityParams(2.0), 0.0)
    with pytest.raises(ValueError):
        terminal_wealth(_payoff(2.0), [1.0, -1.0])
