"""Acceptance criteria 1-10 at their stated tolerances.

Each test prints one PASS/FAIL line, collected again in the terminal summary.
"""
import time

import numpy as np
import pytest
from conftest import record_criterion

from collar_alloc.concavify import terminal_wealth
from collar_alloc.figures import PANELS, build_panel, reproduce_fig2, shipped_config
from collar_alloc.filtering import variance_curve
from collar_alloc.fourier import invert_at_maturity
from collar_alloc.reduced import ReducedValuation
from collar_alloc.riccati import (eval_H, make_grid, pde_residual, solve_homogeneous,
                                  solve_riccati, transform_homogeneous)
from collar_alloc.simulate import SimSpec, budget_check, estimate_mgf, replicate_strategy, simulate_config
from collar_alloc.strategy import Economy

SEED = 20240601
PANEL_T = 0.25


@pytest.fixture(scope="module")
def fig2_run():
    start = time.perf_counter()
    panels, checks = reproduce_fig2()
    return panels, checks, time.perf_counter() - start


def _economy(fig2_run, name):
    panel = fig2_run[0][name]
    if not panel.ok:
        pytest.fail(f"{name} failed to build: {panel.error}")
    return panel.economy


# -- 1 ---------------------------------------------------------------------

def test_c01_mgf_matches_monte_carlo(fig2_run):
    lines, ok = [], True
    for name in PANELS:
        econ = _economy(fig2_run, name)
        cfg = econ.config
        st = econ.strips
        zs = np.array([st.r1, st.r4, st.r4 + 0.25j, st.r4 - 0.25j], complex)
        start = time.perf_counter()
        sol = solve_riccati(cfg.model, cfg.utility, econ.r_curve, zs, econ.grid, times=[0.0])
        h = eval_H(sol, 0.0, econ.zeta0, econ.pi0)
        ens = simulate_config(cfg, SimSpec(100_000, 500, seed=SEED, measure="Q", antithetic=True))
        elapsed = time.perf_counter() - start
        worst_se = worst_rel = 0.0
        for z, hz in zip(zs, h):
            est = estimate_mgf(ens, z)
            d = abs(est.value - hz)
            worst_se = max(worst_se, d / est.stderr)
            worst_rel = max(worst_rel, d / abs(hz))
            ok &= est.agrees(hz, n_se=3.0, rel=0.01)
        ok &= elapsed <= 120
        lines.append(f"{name}: {worst_se:.2f} SE, rel {worst_rel:.2e}, {elapsed:.0f}s")
    record_criterion(1, ok, "; ".join(lines))
    assert ok


# -- 2 ---------------------------------------------------------------------

@pytest.mark.parametrize("extra", [{}, {"lam": 0.5, "x_bar": 0.1, "sigma_x": 0.1, "rho": -0.4}],
                         ids=["fig2", "mean_reverting"])
def test_c02_transformed_system(extra):
    from dataclasses import replace

    cfg = shipped_config("fig2_a_gamma2")
    m = replace(cfg.model, **extra)
    rc = variance_curve(m, cfg.initial.r0, 1.0)
    grid = make_grid(1.0, 2000)
    zs = np.array([-1.25 + 0.5j * k for k in range(5)] + [0.25 - 0.7j * k for k in range(5)])
    direct = solve_riccati(m, cfg.utility, rc, zs, grid)
    bo, co = solve_homogeneous(m, cfg.utility, zs, grid)
    b, c = transform_homogeneous(bo, co, rc(grid), zs)
    err = max(np.max(np.abs(b - direct.b_vals)), np.max(np.abs(c - direct.c_vals)))
    ok = err <= 1e-6
    if extra:
        record_criterion(2, ok, f"sup-norm {err:.2e} on 10 z values (general model)")
    else:
        record_criterion(2, ok, f"sup-norm {err:.2e} on 10 z values (Figure-2 model)")
    assert ok


# -- 3 ---------------------------------------------------------------------

def test_c03_pde_residual():
    rng = np.random.default_rng(3)
    res, ratios = [], []
    for name in PANELS:
        cfg = shipped_config(name)
        rc = variance_curve(cfg.model, cfg.initial.r0, 1.0)
        for _ in range(25):
            t = rng.uniform(0.05, 0.95)
            zeta = rng.lognormal(0.0, 0.3)
            pi = rng.uniform(-0.5, 1.0)
            z = complex(rng.uniform(-1.5, 0.3), rng.uniform(-3.0, 3.0))
            r1 = pde_residual(cfg.model, cfg.utility, rc, t, zeta, pi, z, 1e-4)
            r2 = pde_residual(cfg.model, cfg.utility, rc, t, zeta, pi, z, 5e-5)
            res.append(r1)
            ratios.append(r1 / r2)
    res, ratios = np.array(res), np.array(ratios)
    med = float(np.median(ratios))
    ok = res.max() <= 1e-4 and 3.0 <= med <= 5.0
    record_criterion(3, ok, f"max residual {res.max():.2e} over 100 samples; "
                            f"median ratio on halving h {med:.2f}")
    assert ok


# -- 4 ---------------------------------------------------------------------

def test_c04_budget(fig2_run):
    lines, ok = [], True
    for k, name in enumerate(PANELS):
        econ = _economy(fig2_run, name)
        v0 = econ.value_at_start(econ.payoff)
        est = budget_check(econ.config, econ.payoff,
                           SimSpec(100_000, 500, seed=SEED + 10 + k, measure="P"))
        w = econ.config.initial.w0
        n_se = abs(est.value - w) / est.stderr
        ok &= abs(v0 - 1.0) <= 1e-6 and n_se <= 3.0
        lines.append(f"{name}: |V0-1| {abs(v0 - 1):.1e}, E[xi W] {est.value.real:.4f} ({n_se:.2f} SE)")
    record_criterion(4, ok, "; ".join(lines))
    assert ok


# -- 5 ---------------------------------------------------------------------

def test_c05_terminal_consistency(fig2_run):
    lines, ok = [], True
    for name in ("fig2_a_gamma0.8", "fig2_a_gamma2"):
        econ = _economy(fig2_run, name)
        pay = econ.payoff
        z = np.geomspace(pay.zeta1 / 5, pay.zeta3 * 5, 50)
        ref = terminal_wealth(pay, z)
        at_t = econ.relative_wealth(econ.horizon, z, np.full(50, econ.pi0))
        fourier = invert_at_maturity(pay, econ.strips, z)
        e1 = float(np.max(np.abs(at_t / ref - 1)))
        e2 = float(np.max(np.abs(fourier / ref - 1)))
        ok &= e1 <= 1e-6 and e2 <= 1e-6
        lines.append(f"{name}: V_T {e1:.1e}, transform inversion {e2:.1e}")
    record_criterion(5, ok, "; ".join(lines))
    assert ok


# -- 6 ---------------------------------------------------------------------

def test_c06_gradients(fig2_run):
    h = 1e-5
    lines, ok = [], True
    for name in PANELS:
        econ = _economy(fig2_run, name)
        z_lo = econ.zeta_for_return(PANEL_T, econ.pi0, [0.4])[0]
        z_hi = econ.zeta_for_return(PANEL_T, econ.pi0, [-0.4])[0]
        z = np.geomspace(z_lo, z_hi, 20)
        p = np.full(20, econ.pi0)
        _, vz, vp, _ = econ.evaluate(PANEL_T, z, p)
        fz = (econ.evaluate(PANEL_T, z * (1 + h), p)[0]
              - econ.evaluate(PANEL_T, z * (1 - h), p)[0]) / (2 * h * z)
        fp = (econ.evaluate(PANEL_T, z, p + h)[0] - econ.evaluate(PANEL_T, z, p - h)[0]) / (2 * h)
        ez = float(np.max(np.abs(fz - vz) / np.abs(vz)))
        ep = float(np.max(np.abs(fp - vp) / np.abs(vp)))
        ok &= ez <= 1e-4 and ep <= 1e-4
        lines.append(f"{name}: zeta {ez:.1e}, pi {ep:.1e}")
    record_criterion(6, ok, "; ".join(lines))
    assert ok


# -- 7 ---------------------------------------------------------------------

def test_c07_flat_collar():
    cfg = shipped_config("flat_collar")
    pi0 = cfg.initial.pi0
    econ = Economy(cfg, times=[0.25, 0.5], reference_pis=[pi0 - 0.1, pi0, pi0 + 0.13])
    g, s = cfg.utility.gamma, cfg.model.sigma
    err = 0.0
    for t in (0.0, 0.25, 0.5):
        z = np.geomspace(0.3, 3.0, 20)
        p = pi0 + np.linspace(-0.1, 0.13, 20)
        err = max(err, float(np.max(np.abs(econ.theta(t, z, p) - p / (g * s)))))
    rv = ReducedValuation(cfg.model, cfg.utility, 0.0, cfg.initial.horizon_T, econ.payoff)
    rep = replicate_strategy(cfg.model, cfg.utility, cfg.initial, rv,
                             SimSpec(200, 10_000, seed=SEED, measure="P"),
                             terminal=lambda zt: terminal_wealth(econ.payoff, zt))
    ok = err <= 1e-6 and rep.rms <= 0.005
    record_criterion(7, ok, f"max|theta - pi/(gamma sigma)| {err:.1e}; replication RMS {rep.rms:.2e}")
    assert ok


# -- 8 ---------------------------------------------------------------------

def test_c08_figure2(fig2_run):
    panels, checks, elapsed = fig2_run
    failed = [c for c in checks if not c.passed]
    ok = not failed and elapsed <= 600
    for c in checks:
        print(f"  {'ok  ' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    record_criterion(8, ok, f"{len(checks) - len(failed)}/{len(checks)} checks in {elapsed:.0f}s; "
                            f"failed: {', '.join(c.name for c in failed) or 'none'}")
    assert ok


# -- 9 ---------------------------------------------------------------------

def test_c09_log_utility_limit():
    gaps = {}
    for g in (0.9, 0.99):
        panel = build_panel(f"a_gamma{g}", shipped_config("fig2_a_gamma0.8").with_gamma(g))
        assert panel.ok, panel.error
        gaps[g] = float(np.max(np.abs(panel.column("theta") - panel.column("theta_myopic"))))
    bound = 5 * gaps[0.9] * (abs(0.99 - 1) / abs(0.9 - 1))
    ok = gaps[0.99] < bound
    record_criterion(9, ok, f"max gap {gaps[0.99]:.4f} at gamma 0.99 vs bound {bound:.4f} "
                            f"(gap {gaps[0.9]:.4f} at gamma 0.9)")
    assert ok


# -- 10 --------------------------------------------------------------------

def test_c10_replication(fig2_run):
    econ = _economy(fig2_run, "fig2_a_gamma2")
    cfg = econ.config
    rv = ReducedValuation(cfg.model, cfg.utility, cfg.initial.r0, cfg.initial.horizon_T, econ.payoff)
    rms = {}
    # the coarse run sums pairs of the fine run's increments, so both see the same paths
    for steps, ff in ((10_000, 2), (20_000, 1)):
        rep = replicate_strategy(cfg.model, cfg.utility, cfg.initial, rv,
                                 SimSpec(200, steps, seed=SEED, measure="P", fine_factor=ff),
                                 terminal=lambda zt: terminal_wealth(econ.payoff, zt))
        rms[steps] = rep.rms
    ratio = rms[10_000] / rms[20_000]
    ok = max(rms.values()) <= 0.02 and 1.3 <= ratio <= 2.5
    record_criterion(10, ok, f"RMS {rms[10_000]:.2%} at 1e4 steps, {rms[20_000]:.2%} at 2e4; "
                             f"ratio {ratio:.2f}")
    assert ok
