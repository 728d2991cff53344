"""Command-line front end.

    collar-alloc reproduce-fig1  [--config PATH] [--out DIR]
    collar-alloc reproduce-fig2  [--config DIR]  [--out DIR]
    collar-alloc terminal-wealth [--config PATH] [--out DIR]
    collar-alloc calibrate-y     [--config PATH] [--out DIR]
    collar-alloc strategy-curve  [--config PATH] [--out DIR] [--t T] [--pi PI]
    collar-alloc mc-check        [--config PATH] [--out DIR] [--seed N]

Every command takes ``--tol-override KEY=VAL`` (repeatable).  Keys naming a
numerics field of the config (riccati_steps, tail_tol, ...) are applied to
the config; the remaining check keys are listed in CHECK_DEFAULTS.
Every CSV has a header row and ends with a ``# sha256=`` line over the
preceding bytes.  Exit status: 0 all checks passed, 1 a check failed,
2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .concavify import terminal_wealth
from .figures import PANELS, flow_curve, points_table, reproduce_fig2, shipped_config
from .model import ConfigError, Numerics, load_config
from .riccati import solve_riccati
from .simulate import SimSpec, budget_check, estimate_mgf, simulate_config
from .strategy import Economy, strategy_curve

CHECK_DEFAULTS = {
    "mc_paths": 100000,
    "mc_steps": 500,
    "mc_n_se": 3.0,
    "mc_rel": 0.01,
    "budget_tol": 1e-6,
}
_NUMERIC_FIELDS = {f.name for f in fields(Numerics)}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    body = buf.getvalue()
    digest = hashlib.sha256(body.encode()).hexdigest()
    return body + f"# sha256={digest}\n"


def verify_csv(text: str) -> bool:
    """True if the trailing checksum matches the body."""
    body, sep, last = text.rstrip("\n").rpartition("\n")
    if not sep or not last.startswith("# sha256="):
        return False
    return hashlib.sha256((body + "\n").encode()).hexdigest() == last[len("# sha256="):]


def write_csv(path: Path, header, rows):
    path.write_text(render_csv(header, rows), newline="\n")
    return path


def write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serialisable: {type(o)}")


def _emit(msg=""):
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# argument handling


def parse_overrides(items):
    """Split KEY=VAL items into (config overrides, check tolerances)."""
    cfg, checks = {}, dict(CHECK_DEFAULTS)
    for item in items or []:
        key, sep, val = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise UsageError(f"--tol-override expects KEY=VAL, got {item!r}")
        try:
            num = json.loads(val)
        except json.JSONDecodeError:
            raise UsageError(f"--tol-override value for {key} is not a number: {val!r}")
        if isinstance(num, bool) or not isinstance(num, (int, float)):
            raise UsageError(f"--tol-override value for {key} is not a number: {val!r}")
        if key in _NUMERIC_FIELDS:
            cfg[key] = num
        elif key in CHECK_DEFAULTS:
            checks[key] = type(CHECK_DEFAULTS[key])(num)
        else:
            known = sorted(_NUMERIC_FIELDS | set(CHECK_DEFAULTS))
            raise UsageError(f"unknown tolerance key {key!r}; known: {', '.join(known)}")
    return cfg, checks


def _load(args, overrides):
    if args.config:
        return load_config(args.config, overrides)
    return shipped_config("fig1", overrides)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_reproduce_fig1(args, cfg_over, checks) -> int:
    config = _load(args, cfg_over)
    te, flow = flow_curve(config)
    path = write_csv(_out_dir(args) / "fig1.csv", ["tracking_error", "flow"], zip(te, flow))
    _emit(f"wrote {path} ({te.size} points)")
    return 0


def _fig2_configs(args, cfg_over):
    if args.config:
        return {name: load_config(Path(args.config) / f"{name}.json", cfg_over) for name in PANELS}
    return {name: shipped_config(name, cfg_over) for name in PANELS}


def cmd_reproduce_fig2(args, cfg_over, checks) -> int:
    out = _out_dir(args)
    configs = _fig2_configs(args, cfg_over)
    start = time.perf_counter()
    panels, results = reproduce_fig2(configs, t=args.t if args.t is not None else 0.25)
    header = ["t", "zeta", "relative_return", "theta", "theta_myopic", "theta_merton"]
    for name, p in panels.items():
        if p.ok:
            path = write_csv(out / f"{name}.csv", header, points_table(p.points))
            _emit(f"{name}: wrote {path} ({len(p.points)} points, {p.elapsed:.1f}s)")
        else:
            _emit(f"{name}: FAILED {p.error}")
    for c in results:
        _emit(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    summary = {
        "panels": {name: p.summary() for name, p in panels.items()},
        "checks": [c.as_dict() for c in results],
        "all_passed": all(c.passed for c in results),
    }
    write_json(out / "fig2_summary.json", summary)
    _emit(f"total {time.perf_counter() - start:.1f}s")
    return 0 if summary["all_passed"] else 1


def _economy(args, cfg_over, times=()):
    config = _load(args, cfg_over)
    return config, Economy(config, times=times)


def cmd_terminal_wealth(args, cfg_over, checks) -> int:
    config, econ = _economy(args, cfg_over)
    pay = econ.payoff
    zeta = np.geomspace(pay.zeta1 / 20, pay.zeta3 * 20, 401)
    v = terminal_wealth(pay, zeta)
    out = _out_dir(args)
    write_csv(out / "terminal_wealth.csv", ["zeta", "v_T"], zip(zeta, v))
    summary = {"label": config.label, **pay.summary()}
    write_json(out / "terminal_wealth.json", summary)
    _emit(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_calibrate_y(args, cfg_over, checks) -> int:
    config, econ = _economy(args, cfg_over)
    v0 = econ.value_at_start(econ.payoff)
    resid = v0 - 1.0
    ok = abs(resid) <= checks["budget_tol"]
    summary = {"label": config.label, **econ.payoff.summary(), "v0": v0, "residual": resid,
               "passed": ok}
    write_json(_out_dir(args) / "calibrate.json", summary)
    _emit(f"y = {econ.payoff.y:.12g}")
    _emit(f"|V0 - 1| = {abs(resid):.3g} ({'PASS' if ok else 'FAIL'} at {checks['budget_tol']:g})")
    return 0 if ok else 1


def cmd_strategy_curve(args, cfg_over, checks) -> int:
    t = 0.25 if args.t is None else args.t
    config, econ = _economy(args, cfg_over, times=[t])
    myopic = Economy(config.myopic(), times=[t])
    pts = strategy_curve(econ, myopic, t, pi=args.pi)
    header = ["t", "zeta", "relative_return", "theta", "theta_myopic", "theta_merton"]
    path = write_csv(_out_dir(args) / "strategy.csv", header, points_table(pts))
    _emit(f"wrote {path} ({len(pts)} points)")
    return 0


def cmd_mc_check(args, cfg_over, checks) -> int:
    config, econ = _economy(args, cfg_over)
    st = econ.strips
    zs = [st.r1, st.r4, complex(st.r4, 0.25), complex(st.r4, -0.25)]
    sol = solve_riccati(config.model, config.utility, econ.r_curve, np.array(zs, complex),
                        econ.grid, times=[0.0])
    _, a, b, c = sol.row(0)
    lh = a + b * econ.pi0 + 0.5 * c * econ.pi0 ** 2
    h = np.exp(lh)
    spec_q = SimSpec(int(checks["mc_paths"]), int(checks["mc_steps"]), seed=args.seed,
                     measure="Q", antithetic=True)
    ens = simulate_config(config, spec_q)
    rows = []
    for z, hz in zip(zs, h):
        est = estimate_mgf(ens, z)
        ok = est.agrees(hz, checks["mc_n_se"], checks["mc_rel"])
        rows.append((f"H(0;z={_zstr(z)})", hz, est.value, est.stderr, ok))
    spec_p = SimSpec(int(checks["mc_paths"]), int(checks["mc_steps"]), seed=args.seed + 1,
                     measure="P", antithetic=True)
    bud = budget_check(config, econ.payoff, spec_p)
    w = 1.0
    rows.append(("E[xi_T W_T]/w", w, bud.value, bud.stderr, bud.agrees(w, checks["mc_n_se"])))
    _emit(f"{'quantity':<28}{'analytic':>24}{'estimate':>30}{'stderr':>12}  result")
    out_rows = []
    for q, ana, est, se, ok in rows:
        _emit(f"{q:<28}{_cstr(ana):>24}{_cstr(est):>30}{se:>12.3g}  {'PASS' if ok else 'FAIL'}")
        ana, est = complex(ana), complex(est)
        out_rows.append((q, ana.real, ana.imag, est.real, est.imag, se, ok))
    path = _out_dir(args) / "mc_check.csv"
    header = ["quantity", "analytic_re", "analytic_im", "estimate_re", "estimate_im", "stderr", "passed"]
    write_csv(path, header, out_rows)
    return 0 if all(r[-1] for r in rows) else 1


def _zstr(z):
    z = complex(z)
    if z.imag == 0:
        return f"{z.real:.6g}"
    return f"{z.real:.6g}{z.imag:+.6g}i"


def _cstr(v):
    v = complex(v)
    if abs(v.imag) < 1e-300:
        return f"{v.real:.10g}"
    return f"{v.real:.8g}{v.imag:+.8g}i"


def dump_riccati(args, cfg_over) -> Path:
    """Debug dump of (t, u, A, B, C) on the upper contour for a few u values."""
    config = _load(args, cfg_over)
    econ = Economy(config, calibrate=False)
    us = np.array([0.0, 0.5, 1.0, 2.0, 5.0, 10.0])
    z = econ.strips.r4 - 1j * us
    grid = econ.grid
    times = grid[:: max(1, (grid.size - 1) // 100)]
    sol = solve_riccati(config.model, config.utility, econ.r_curve, z, grid, times=times)
    rows = []
    for m, t in enumerate(sol.times):
        _, a, b, c = sol.row(m)
        for k, uu in enumerate(us):
            rows.append((t, z[k].real, uu, a[k].real, a[k].imag, b[k].real, b[k].imag,
                         c[k].real, c[k].imag))
    header = ["t", "z_re", "u", "a_re", "a_im", "b_re", "b_im", "c_re", "c_im"]
    return write_csv(_out_dir(args) / "riccati_dump.csv", header, rows)


COMMANDS = {
    "reproduce-fig1": cmd_reproduce_fig1,
    "reproduce-fig2": cmd_reproduce_fig2,
    "terminal-wealth": cmd_terminal_wealth,
    "calibrate-y": cmd_calibrate_y,
    "strategy-curve": cmd_strategy_curve,
    "mc-check": cmd_mc_check,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="collar-alloc",
                                 description="Asset allocation under a fund-flow collar with a "
                                             "learned drift.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config (reproduce-fig2: directory of panel configs)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=20240601)
        p.add_argument("--tol-override", action="append", default=[], metavar="KEY=VAL")
        p.add_argument("--dump-riccati", action="store_true",
                       help="also write the Riccati coefficients on the upper contour")
        if name in ("strategy-curve", "reproduce-fig2"):
            p.add_argument("--t", type=float, default=None, help="evaluation time")
        if name == "strategy-curve":
            p.add_argument("--pi", type=float, default=None, help="filter mean (default pi0)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg_over, checks = parse_overrides(args.tol_override)
        if args.dump_riccati and args.command != "reproduce-fig2":
            _emit(f"wrote {dump_riccati(args, cfg_over)}")
        return COMMANDS[args.command](args, cfg_over, checks)
    except (UsageError, ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"collar-alloc: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"collar-alloc: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
