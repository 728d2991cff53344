import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collar_alloc.filtering import (FilterState, VarianceCurve, filter_step, variance_closed_form,
                                    variance_curve, variance_path)
from collar_alloc.model import ModelParams

CONST = ModelParams(sigma=0.15)
OU = ModelParams(sigma=0.2, lam=0.8, x_bar=0.3, sigma_x=0.25, rho=-0.5)


@given(st.floats(0.0, 5.0))
@settings(max_examples=30, deadline=None)
def test_ode_matches_closed_form(r0):
    grid = np.linspace(0, 1, 11)
    np.testing.assert_allclose(variance_path(CONST, r0, grid), variance_closed_form(r0, grid),
                               rtol=1e-8, atol=1e-12)


def test_curve_uses_closed_form():
    rc = VarianceCurve(CONST, 0.09, 1.0)
    assert rc.is_closed_form
    assert rc(0.5) == pytest.approx(0.09 / 1.045)
    assert rc.loading(0.5) == rc(0.5)


def test_ou_curve_matches_path_and_steady_state():
    rc = variance_curve(OU, 0.4, 20.0)
    grid = np.linspace(0, 20.0, 41)
    np.testing.assert_allclose(rc(grid), variance_path(OU, 0.4, grid), rtol=1e-7, atol=1e-10)
    # stationary point of s_x^2 - 2 lam R - (R + rho s_x)^2
    a = OU.lam + OU.rho * OU.sigma_x
    r_inf = -a + np.sqrt(a * a + OU.sigma_x ** 2 * (1 - OU.rho ** 2))
    assert rc(20.0) == pytest.approx(r_inf, rel=1e-6)
    assert rc.loading(20.0) == pytest.approx(r_inf + OU.rho * OU.sigma_x)


def test_variance_nonincreasing_without_latent_noise():
    r = variance_path(CONST, 0.5, np.linspace(0, 3, 31))
    assert np.all(np.diff(r) < 0) and np.all(r > 0)


def test_closed_form_rejects_ou():
    with pytest.raises(ValueError):
        variance_closed_form(0.1, 0.5, OU)
    with pytest.raises(ValueError):
        variance_closed_form(-0.1, 0.5)


def test_bad_grids():
    with pytest.raises(ValueError):
        variance_path(CONST, 0.1, [0.1, 0.2])
    with pytest.raises(ValueError):
        variance_path(CONST, 0.1, [0.0, 0.2, 0.1])


def test_filter_step_exact_variance():
    s = FilterState(0.0, 0.5, 0.09)
    for _ in range(10):
        s = filter_step(s, CONST, 0.01, 0.1)
    assert s.t == pytest.approx(1.0)
    assert s.r_var == pytest.approx(0.09 / 1.09, rel=1e-12)


def test_filter_step_mean_update():
    s = FilterState(0.0, 0.2, 0.3)
    out = filter_step(s, OU, 0.05, 0.01)
    expect = 0.2 - OU.lam * (0.2 - OU.x_bar) * 0.01 + (0.3 + OU.rho * OU.sigma_x) * 0.05
    assert out.pi == pytest.approx(expect)
    with pytest.raises(ValueError):
        filter_step(s, OU, 0.0, 0.0)


def test_zero_prior_stays_zero():
    rc = variance_curve(CONST, 0.0, 1.0)
    assert rc(0.7) == 0.0
