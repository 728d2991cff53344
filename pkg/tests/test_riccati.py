import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collar_alloc import _fallback, kernels
from collar_alloc.filtering import variance_curve
from collar_alloc.model import ModelParams, UtilityParams
from collar_alloc.riccati import (RiccatiBlowUp, eval_H, homogeneous_closed_form, make_grid,
                                  q_generator, solve_homogeneous, solve_riccati,
                                  transform_homogeneous)

P = ModelParams(r=0.01, sigma=0.15)
U = UtilityParams(2.0)
GRID = make_grid(1.0, 1000)


def gaussian_quadratic_mgf(params, g, r0, t, T, pi, z):
    """E[exp(z (c0 + a1 Z - a2 Z^2))] for the constant-drift model, Z ~ N(0, 1)."""
    bs = params.beta * params.sigma
    tau = T - t
    r_t, r_T = r0 / (1 + r0 * t), r0 / (1 + r0 * T)
    kappa = (g - 1) * (params.r + 0.5 * bs * bs)
    q = (pi - bs) / r_t
    c0 = 0.5 * (r_t - r_T) * q * q + kappa * tau + 0.5 * np.log((1 + r0 * T) / (1 + r0 * t))
    a1 = np.sqrt(tau) * ((g - 1) * bs - r_T * q)
    a2 = 0.5 * r_T * tau
    d = 1 + 2 * z * a2
    return np.exp(z * c0 + 0.5 * (z * a1) ** 2 / d) / np.sqrt(d)


@pytest.mark.parametrize("r0", [0.09, 0.5])
def test_matches_gaussian_quadratic_closed_form(r0):
    rc = variance_curve(P, r0, 1.0)
    zs = np.array([-1.2, -0.5 + 2j, 0.3 - 1j, 0.7])
    sol = solve_riccati(P, U, rc, zs, GRID, times=[0.0, 0.4])
    for t in (0.0, 0.4):
        for pi in (-0.2, 0.6):
            h = eval_H(sol, t, 1.0, pi)
            np.testing.assert_allclose(h, gaussian_quadratic_mgf(P, 2.0, r0, t, 1.0, pi, zs),
                                       rtol=1e-10)


def test_zero_prior_is_lognormal():
    rc = variance_curve(P, 0.0, 1.0)
    zs = np.array([-0.8, 0.4 + 1.5j])
    sol = solve_riccati(P, U, rc, zs, GRID, times=[0.0])
    pi = 0.5
    a, q, _, _ = q_generator(P, U, 0.0, 1.0, pi)
    exact = np.exp(zs * (a - 0.5 * q * q) + 0.5 * zs * zs * q * q)
    np.testing.assert_allclose(eval_H(sol, 0.0, 1.0, pi), exact, rtol=1e-11)


def test_homogeneous_closed_form_and_transform():
    m = ModelParams(sigma=0.2, lam=0.7, x_bar=0.2)
    zs = np.array([-0.6 + 1j, 0.5 - 2j, -1.3])
    bo, co = solve_homogeneous(m, U, zs, GRID)
    bc, cc = homogeneous_closed_form(m, U, zs, 1.0 - GRID[:, None])
    np.testing.assert_allclose(bo, bc, atol=1e-10)
    np.testing.assert_allclose(co, cc, atol=1e-10)
    rc = variance_curve(m, 0.2, 1.0)
    b, c = transform_homogeneous(bo, co, rc(GRID), zs)
    direct = solve_riccati(m, U, rc, zs, GRID)
    np.testing.assert_allclose(b, direct.b_vals, atol=1e-9)
    np.testing.assert_allclose(c, direct.c_vals, atol=1e-9)


def test_terminal_values_and_z_zero():
    rc = variance_curve(P, 0.09, 1.0)
    sol = solve_riccati(P, U, rc, np.array([0.0, -0.5]), GRID)
    z, a, b, c = sol.row(sol.times.size - 1)
    assert np.all(a == 0) and np.all(b == 0) and np.all(c == 0)
    assert eval_H(sol, 0.3, 1.7, 0.4)[0] == pytest.approx(1.0, abs=1e-14)
    assert eval_H(sol, 1.0, 2.0, 0.4)[1] == pytest.approx(2.0 ** -0.5)


@given(st.floats(-2.0, 0.5), st.floats(-4.0, 4.0), st.floats(-0.5, 1.0), st.floats(0.2, 5.0))
@settings(max_examples=40, deadline=None)
def test_conjugate_symmetry(re, im, pi, zeta):
    rc = variance_curve(P, 0.09, 1.0)
    z = complex(re, im)
    sol = solve_riccati(P, U, rc, np.array([z, z.conjugate()]), make_grid(1.0, 200), times=[0.0])
    h = eval_H(sol, 0.0, zeta, pi)
    assert h[1] == pytest.approx(np.conj(h[0]), rel=1e-12, abs=1e-300)


def test_blow_up_detected():
    # 1 + 2 z a2 vanishes near z = -12.1 at t = 0
    rc = variance_curve(P, 0.09, 1.0)
    sol = solve_riccati(P, U, rc, np.array([-15.0, -1.0]), GRID, times=[0.0, 0.9])
    assert sol.blew_up
    assert np.isfinite(sol.blow_time[0]) and np.isnan(sol.blow_time[1])
    with pytest.raises(RiccatiBlowUp):
        eval_H(sol, 0.0, 1.0, 0.5)


def test_richardson_error_estimate():
    rc = variance_curve(P, 0.09, 1.0)
    sol = solve_riccati(P, U, rc, np.array([-0.5 + 30j]), make_grid(1.0, 50), times=[0.0],
                        richardson=True, rtol=1e-10)
    assert sol.error_estimate <= 1e-10


def test_grid_validation():
    rc = variance_curve(P, 0.09, 1.0)
    with pytest.raises(ValueError):
        solve_riccati(P, U, rc, [0.5], np.array([0.0, 0.5, 0.4, 1.0]))
    with pytest.raises(ValueError):
        solve_riccati(P, U, rc, [0.5], GRID, times=[0.12345])
    g = make_grid(1.0, 10, [0.123])
    assert 0.123 in g and g[-1] == 1.0


def test_backend_parity(monkeypatch):
    m = ModelParams(sigma=0.2, lam=0.4, x_bar=0.1, sigma_x=0.15, rho=-0.3)
    rc = variance_curve(m, 0.2, 1.0)
    zs = -0.7 - 1j * np.linspace(0, 60, 33)
    ref = solve_riccati(m, U, rc, zs, GRID, times=[0.0, 0.5])
    monkeypatch.setattr(kernels, "riccati_sweep", _fallback.riccati_sweep)
    alt = solve_riccati(m, U, rc, zs, GRID, times=[0.0, 0.5])
    for x, y in ((ref.a_flat, alt.a_flat), (ref.b_flat, alt.b_flat), (ref.c_flat, alt.c_flat)):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)
