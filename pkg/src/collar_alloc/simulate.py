"""Monte Carlo oracle for the filtered market under P and under the benchmarked measure Q.

All positive processes (S, W, Y, xi and so zeta = xi Y^gamma) are advanced
in logs; the filter mean pi uses Euler steps with the variance loading
taken at the step midpoint.  In observation form every process is driven
by the innovation dI = dZ^S + (X - pi) dt, which under Q becomes
dI = dI^Q + (beta sigma - pi) dt with I^Q a Brownian motion.

Normals are drawn per block of paths from a Philox stream keyed by
(seed, block), so path i sees the same draws whatever the thread count.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .filtering import variance_curve
from .model import Config, InitialConditions, ModelParams, UtilityParams

BLOCK = 2048


class SimulationError(RuntimeError):
    pass


def worker_count() -> int:
    """Worker threads, capped by COLLAR_ALLOC_THREADS."""
    n = os.cpu_count() or 1
    cap = os.environ.get("COLLAR_ALLOC_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise SimulationError(f"COLLAR_ALLOC_THREADS must be an integer, got {cap!r}")
    return n


@dataclass(frozen=True)
class SimSpec:
    """Ensemble size and discretisation.

    Brownian increments are drawn on a grid ``fine_factor`` times finer and
    summed, so runs at different resolutions can share the same paths.
    """

    n_paths: int
    steps_per_year: int
    seed: int = 0
    measure: str = "Q"
    antithetic: bool = False
    fine_factor: int = 1

    def __post_init__(self):
        errs = []
        if int(self.n_paths) < 1:
            errs.append("n_paths must be >= 1")
        if int(self.steps_per_year) < 1:
            errs.append("steps_per_year must be >= 1")
        if self.measure not in ("P", "Q"):
            errs.append("measure must be 'P' or 'Q'")
        if int(self.fine_factor) < 1:
            errs.append("fine_factor must be >= 1")
        if self.antithetic and int(self.n_paths) % 2:
            errs.append("antithetic pairing needs an even n_paths")
        if errs:
            raise ValueError("; ".join(errs))


@dataclass
class PathEnsemble:
    """Recorded states, arrays of shape (len(times), n_paths).

    ``x`` is NaN under Q (the latent state is not simulated there).
    ``i_incr`` holds the innovation increments over each step when the full
    path was recorded, else None.
    """

    times: np.ndarray
    x: np.ndarray
    log_s: np.ndarray
    pi: np.ndarray
    log_y: np.ndarray
    log_xi: np.ndarray
    measure: str
    antithetic: bool
    i_incr: np.ndarray | None = None
    dt: float = float("nan")
    gamma: float = float("nan")

    @property
    def n_paths(self) -> int:
        return self.pi.shape[1]

    @property
    def log_zeta(self):
        return self.log_xi + self.gamma * self.log_y

    @property
    def zeta(self):
        return np.exp(self.log_zeta)

    def at(self, t):
        m = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[m] - t) > 1e-9:
            raise KeyError(f"time {t} was not recorded")
        return m


def _step_grid(horizon, steps_per_year):
    n = max(1, int(round(horizon * steps_per_year)))
    return np.linspace(0.0, horizon, n + 1)


def _block_normals(spec: SimSpec, block: int, n_steps: int, n: int, dim: int):
    """(prior draws of shape (n,), step normals of shape (n_steps, n, dim)) for one block.

    Step normals are aggregated from the fine grid; antithetic pairs sit in
    the two halves of the block.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(spec.seed), block])))
    k = int(spec.fine_factor)
    half = n // 2 if spec.antithetic else n

    prior = rng.standard_normal(half)
    if spec.antithetic:
        prior = np.concatenate([prior, -prior])
    out = np.empty((n_steps, n, dim))
    for m in range(n_steps):
        z = rng.standard_normal((k, half, dim)).sum(axis=0) / math.sqrt(k)
        out[m] = np.concatenate([z, -z], axis=0) if spec.antithetic else z
    return prior, out


def _record_index(grid, record):
    if record is None:
        return np.array([0, grid.size - 1])
    if isinstance(record, str) and record == "all":
        return np.arange(grid.size)
    rec = np.atleast_1d(np.asarray(record, dtype=float))
    idx = np.array([int(np.argmin(np.abs(grid - t))) for t in rec])
    if np.any(np.abs(grid[idx] - rec) > 1e-9):
        raise ValueError("record times must lie on the simulation grid")
    return np.unique(np.concatenate([[0, grid.size - 1], idx]))


def simulate_paths(model: ModelParams, u: UtilityParams, initial: InitialConditions,
                   spec: SimSpec, record=None, t0: float = 0.0, state=None) -> PathEnsemble:
    """Euler ensemble from (t0, state) to T.

    ``record`` selects stored times: None (start and end), "all", or a list.
    ``state`` optionally overrides the start as a dict with keys among
    x, pi, log_s, log_y, log_xi.  By default pi starts at ``initial.pi0``,
    Y at w0, S and xi at 1, and under P the latent X is drawn from the
    filter prior N(pi, R_t0).
    """
    horizon = initial.horizon_T
    if not 0 <= t0 < horizon:
        raise ValueError("t0 must lie in [0, T)")
    grid = t0 + _step_grid(horizon - t0, spec.steps_per_year)
    grid[-1] = horizon
    nsteps = grid.size - 1
    rec = _record_index(grid, record)
    full = rec.size == grid.size
    r_curve = variance_curve(model, initial.r0, horizon)
    s_mid = np.asarray(r_curve.loading(0.5 * (grid[1:] + grid[:-1])), dtype=float)
    dts = np.diff(grid)
    n = int(spec.n_paths)
    st = dict(state or {})
    arrays = {k: np.empty((rec.size, n)) for k in ("x", "log_s", "pi", "log_y", "log_xi")}
    incr = np.empty((nsteps, n)) if full else None
    slot = np.full(grid.size, -1)
    slot[rec] = np.arange(rec.size)
    p = model
    bs = p.beta * p.sigma
    q_measure = spec.measure == "Q"
    dim = 1 if q_measure else 2
    blocks = [(b, b * BLOCK, min(n, (b + 1) * BLOCK)) for b in range((n + BLOCK - 1) // BLOCK)]
    if spec.antithetic and BLOCK % 2:
        raise SimulationError("block size must be even for antithetic pairing")

    def init(key, default, lo, hi):
        v = st.get(key, default)
        return np.array(np.broadcast_to(np.asarray(v, dtype=float), (n,))[lo:hi])

    def run(block):
        b, lo, hi = block
        m = hi - lo
        prior, eps = _block_normals(spec, b, nsteps, m, dim)
        pi = init("pi", initial.pi0, lo, hi)
        if q_measure:
            x = np.full(m, np.nan)
        elif "x" in st:
            x = init("x", 0.0, lo, hi)
        else:
            # latent state drawn from the prior N(pi_t, R_t)
            x = pi + math.sqrt(float(r_curve(t0))) * prior
        ls = init("log_s", 0.0, lo, hi)
        ly = init("log_y", math.log(initial.w0), lo, hi)
        lxi = init("log_xi", 0.0, lo, hi)
        rho_c = math.sqrt(max(0.0, 1 - p.rho ** 2))

        def store(k):
            j = slot[k]
            if j >= 0:
                arrays["x"][j, lo:hi] = x
                arrays["log_s"][j, lo:hi] = ls
                arrays["pi"][j, lo:hi] = pi
                arrays["log_y"][j, lo:hi] = ly
                arrays["log_xi"][j, lo:hi] = lxi

        store(0)
        for k in range(nsteps):
            dt = dts[k]
            sq = math.sqrt(dt)
            if q_measure:
                di = sq * eps[k, :, 0] + (bs - pi) * dt
            else:
                dzs = sq * eps[k, :, 0]
                di = dzs + (x - pi) * dt
                dzx = p.rho * dzs + rho_c * sq * eps[k, :, 1]
                x = x + p.lam * (p.x_bar - x) * dt + p.sigma_x * dzx
            if incr is not None:
                incr[k, lo:hi] = di
            ls = ls + (p.r + p.sigma * pi - 0.5 * p.sigma ** 2) * dt + p.sigma * di
            ly = ly + (p.r + bs * pi - 0.5 * bs * bs) * dt + bs * di
            lxi = lxi + (-p.r - 0.5 * pi * pi) * dt - pi * di
            pi = pi + p.lam * (p.x_bar - pi) * dt + s_mid[k] * di
            if not np.all(np.isfinite(pi)) or not np.all(np.isfinite(lxi + ly)):
                bad = int(np.nonzero(~np.isfinite(pi) | ~np.isfinite(lxi + ly))[0][0]) + lo
                raise SimulationError(f"non-finite state on path {bad} at step {k + 1}")
            store(k + 1)

    workers = min(worker_count(), len(blocks))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(run, blocks))
    else:
        for blk in blocks:
            run(blk)
    return PathEnsemble(grid[rec], arrays["x"], arrays["log_s"], arrays["pi"], arrays["log_y"],
                        arrays["log_xi"], spec.measure, spec.antithetic, incr,
                        float(dts.mean()), u.gamma)


def simulate_config(config: Config, spec: SimSpec, record=None) -> PathEnsemble:
    return simulate_paths(config.model, config.utility, config.initial, spec, record)


# ---------------------------------------------------------------------------
# estimators


def _units(values, antithetic):
    """Independent sampling units: antithetic pairs are averaged first."""
    values = np.asarray(values)
    if antithetic:
        half = values.shape[-1] // 2
        return 0.5 * (values[..., :half] + values[..., half:])
    return values


def jackknife_mean(units):
    """Mean and jackknife standard error of i.i.d. units (complex allowed)."""
    units = np.asarray(units)
    n = units.shape[-1]
    if n < 2:
        raise SimulationError("degenerate ensemble: need at least two sampling units")
    mean = units.mean(axis=-1)
    loo = (mean[..., None] * n - units) / (n - 1)
    dev = loo - loo.mean(axis=-1, keepdims=True)
    var = (n - 1) / n * np.sum(np.abs(dev) ** 2, axis=-1)
    return mean, np.sqrt(var)


@dataclass(frozen=True)
class Estimate:
    value: complex
    stderr: float

    def agrees(self, reference, n_se=3.0, rel=None):
        d = abs(self.value - reference)
        ok = d <= n_se * self.stderr
        if rel is not None:
            ok = ok and d <= rel * abs(reference)
        return bool(ok)


def estimate_mgf(ensemble: PathEnsemble, z, t: float | None = None) -> Estimate:
    """E^Q[(zeta_T / zeta_t)^z] from an ensemble started at the conditioning state.

    The standard error of a complex estimate is sqrt(se_re^2 + se_im^2).
    """
    if ensemble.measure != "Q":
        raise SimulationError("the MGF oracle needs an ensemble simulated under Q")
    z = complex(z)
    if z == 0:
        return Estimate(1.0 + 0j, 0.0)
    m0 = 0 if t is None else ensemble.at(t)
    lz = ensemble.log_zeta[-1] - ensemble.log_zeta[m0]
    vals = np.exp(z * lz)
    mean, se = jackknife_mean(_units(vals, ensemble.antithetic))
    if not np.isfinite(mean):
        raise SimulationError("degenerate ensemble: non-finite MGF sample")
    return Estimate(complex(mean), float(se))


def estimate_mgf_many(ensemble: PathEnsemble, zs):
    return [estimate_mgf(ensemble, z) for z in zs]


def innovation_stats(ensemble: PathEnsemble):
    """(mean, variance / dt) of the innovation increments under P."""
    if ensemble.i_incr is None:
        raise SimulationError("innovation increments need a fully recorded ensemble")
    d = ensemble.i_incr
    return float(d.mean()), float(d.var() / ensemble.dt)


# ---------------------------------------------------------------------------
# replication


@dataclass
class ReplicationReport:
    n_paths: int
    steps_per_year: int
    rel_errors: np.ndarray
    budget: Estimate
    w0: float
    extras: dict = field(default_factory=dict)

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.rel_errors ** 2)))

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.rel_errors)))


def replicate_strategy(model: ModelParams, u: UtilityParams, initial: InitialConditions,
                       valuer, spec: SimSpec, terminal=None) -> ReplicationReport:
    """Trade theta_t = beta + (V_zeta zeta (gamma beta sigma - pi) + V_pi s_t) / (sigma V)
    along simulated P-paths and compare W_T with Y_T V_T(zeta_T).

    ``valuer.evaluate(t, zeta, pi)`` must return (V, V_zeta, V_pi, ...) at any
    grid time; ``terminal(zeta)`` gives V_T (defaults to the valuer at T).
    """
    from .strategy import StrategyError, theta_from_partials

    if spec.measure != "P":
        raise ValueError("replication runs under the physical measure")
    ens = simulate_paths(model, u, initial, spec, record="all")
    r_curve = variance_curve(model, initial.r0, initial.horizon_T)
    p = model
    lzeta = ens.log_zeta
    lw = np.full(ens.n_paths, math.log(initial.w0))
    grid = ens.times
    for k in range(grid.size - 1):
        t = grid[k]
        zeta = np.exp(lzeta[k])
        pi = ens.pi[k]
        try:
            v, vz, vp = valuer.evaluate(t, zeta, pi)[:3]
            th = theta_from_partials(p, u, r_curve(t), zeta, pi, v, vz, vp)
        except (StrategyError, ArithmeticError, ValueError) as exc:
            raise StrategyError(f"strategy evaluation failed at t={t:.6g} (step {k}): {exc}")
        dt = grid[k + 1] - t
        lw = lw + (p.r + th * p.sigma * pi - 0.5 * (th * p.sigma) ** 2) * dt + th * p.sigma * ens.i_incr[k]
    zeta_T = np.exp(lzeta[-1])
    if terminal is None:
        v_T = valuer.evaluate(grid[-1], zeta_T, ens.pi[-1])[0]
    else:
        v_T = terminal(zeta_T)
    target = np.exp(ens.log_y[-1]) * v_T
    w_T = np.exp(lw)
    rel = w_T / target - 1
    xi_w = np.exp(ens.log_xi[-1] + lw)
    mean, se = jackknife_mean(_units(xi_w, spec.antithetic))
    return ReplicationReport(int(spec.n_paths), int(spec.steps_per_year), rel,
                             Estimate(complex(mean), float(se)), initial.w0)


def budget_check(config: Config, payoff, spec: SimSpec) -> Estimate:
    """E^P[xi_T W_T] with W_T = Y_T V_T(zeta_T): the static budget under the target."""
    from .concavify import terminal_wealth

    if spec.measure != "P":
        raise ValueError("the budget is a P-expectation")
    ens = simulate_config(config, spec)
    w_T = np.exp(ens.log_y[-1]) * terminal_wealth(payoff, ens.zeta[-1])
    vals = np.exp(ens.log_xi[-1]) * w_T
    mean, se = jackknife_mean(_units(vals, spec.antithetic))
    return Estimate(complex(mean), float(se))
