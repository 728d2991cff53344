"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--nodes 4096] [--steps 2000] [--states 200]
"""
import argparse
import time

import numpy as np

from collar_alloc import _fallback
from collar_alloc.filtering import variance_curve
from collar_alloc.fourier import StripChoice
from collar_alloc.model import ModelParams

try:
    from collar_alloc import _kernels
except ImportError:
    _kernels = None


def sweep_inputs(nodes, steps):
    p = ModelParams(r=0.0, sigma=0.15, lam=0.0, x_bar=0.0, sigma_x=0.0, rho=0.0, beta=1.0)
    rc = variance_curve(p, 0.09, 1.0)
    grid = np.linspace(0.0, 1.0, steps + 1)
    z = StripChoice.default(2.0).r4 - 1j * np.linspace(0, 200, nodes)
    s_node = np.ascontiguousarray(rc.loading(grid))
    s_mid = np.ascontiguousarray(rc.loading(0.5 * (grid[1:] + grid[:-1])))
    store_slot = np.full(steps + 1, -1, dtype=np.int64)
    store_slot[0] = 0
    args = (z, grid, s_node, s_mid, 0.0, 0.0, 0.15, 2.0, 0.0, store_slot,
            np.zeros(1, np.int64), np.full(1, nodes, np.int64), np.zeros(nodes, np.int64))
    return args, nodes


def run_sweep(mod, args, nodes):
    out = [np.zeros(nodes, complex) for _ in range(3)]
    blow = np.full(nodes, -1, np.int64)
    t0 = time.perf_counter()
    mod.riccati_sweep(*args, *out, blow, 1e8)
    return time.perf_counter() - t0, out


def run_sums(mod, states, nodes, reps=20):
    rng = np.random.default_rng(0)
    lz = rng.normal(0, 0.3, states)
    pi = rng.normal(0.6, 0.1, states)
    z = 0.25 - 1j * np.linspace(0, 200, nodes)
    a = -0.01 * np.abs(z) ** 2 * 1e-3 + 0j
    b = 0.01 * z
    c = -1e-3 * z * z
    coef = np.ones(nodes, complex) / nodes
    outs = [np.empty(states) for _ in range(4)]
    t0 = time.perf_counter()
    for _ in range(reps):
        mod.contour_sums(lz, pi, z, a, b, c, coef, *outs)
    return (time.perf_counter() - t0) / reps, outs


def _rel(out, ref):
    return max(float(np.max(np.abs(x - y)) / max(np.max(np.abs(y)), 1e-300)) for x, y in zip(out, ref))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=4096)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--states", type=int, default=200)
    a = ap.parse_args()
    args, n = sweep_inputs(a.nodes, a.steps)
    rows = []
    t_py, ref = run_sweep(_fallback, args, n)
    rows.append(("riccati_sweep", "python", t_py, 0.0))
    s_py, sref = run_sums(_fallback, a.states, a.nodes)
    if _kernels is not None:
        t_cy, out = run_sweep(_kernels, args, n)
        err = _rel(out, ref)
        rows.append(("riccati_sweep", "cython", t_cy, err))
        s_cy, sout = run_sums(_kernels, a.states, a.nodes)
    rows.append(("contour_sums", "python", s_py, 0.0))
    if _kernels is not None:
        err = _rel(sout, sref)
        rows.append(("contour_sums", "cython", s_cy, err))
    print(f"{'kernel':<16}{'backend':<10}{'seconds':>12}{'max rel diff':>14}")
    for k, b, t, e in rows:
        print(f"{k:<16}{b:<10}{t:>12.4f}{e:>14.3g}")
    if _kernels is None:
        print("compiled extension not available")
    else:
        print(f"speed-up: sweep {t_py / t_cy:.2f}x, sums {s_py / s_cy:.2f}x")


if __name__ == "__main__":
    main()
