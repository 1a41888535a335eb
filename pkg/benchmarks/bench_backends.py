"""Time the direct and gram loss backends of the nuclear-norm solver.

    python3 benchmarks/bench_backends.py [--repeats 3] [--max-iters 200]

For each problem size the script reports the wall time of one solve per
backend. For gram the one-off cost of building the cached statistics is
listed separately: inside the bandit loop they are updated one round at a
time, so a refit pays only the solve. The last columns give the relative
difference between the two solutions (both run the same iteration on the
same data) and the backend that ``auto`` would pick.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from lowrank_bandit.core import History
from lowrank_bandit.environments import make_lowrank_theta
from lowrank_bandit.estimator import SolverSettings, solve_nuclear_ls

SIZES = [
    # d_a, d_x, n rounds, L
    (5, 8, 100, 1),
    (10, 20, 300, 1),
    (10, 20, 3000, 1),
    (10, 100, 1000, 1),
    (10, 100, 1000, 5),
    (20, 200, 500, 1),
]


def make_history(d_a, d_x, n, L, seed=0):
    rng = np.random.default_rng(seed)
    r = min(2, d_a, d_x)
    theta = make_lowrank_theta(d_a, d_x, r, np.linspace(1.0, 0.5, r), seed=seed).entries
    A = rng.standard_normal((n, d_a))
    X = rng.standard_normal((n, L, d_x))
    Y = np.einsum("na,ad,nld->nl", A, theta, X) + 0.1 * rng.standard_normal((n, L))
    return History.from_arrays(A, X, Y)


def best_time(fn, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--max-iters", type=int, default=200)
    ap.add_argument("--lambda", dest="lam", type=float, default=0.05)
    args = ap.parse_args(argv)

    print(f"{'d_a':>4} {'d_x':>4} {'n':>5} {'L':>2} {'direct_s':>10} {'build_s':>10} {'gram_s':>10} "
          f"{'speedup':>8} {'rel_diff':>9} auto")
    for d_a, d_x, n, L in SIZES:
        hist = make_history(d_a, d_x, n, L)
        fresh = make_history(d_a, d_x, n, L)
        tb, _ = best_time(fresh.sufficient_stats, 1)
        hist.sufficient_stats()
        res = {}
        for backend in ("direct", "gram"):
            s = SolverSettings(max_iters=args.max_iters, rel_tol=1e-300, fp_tol=1e-300, backend=backend)
            res[backend] = best_time(lambda: solve_nuclear_ls(hist, args.lam, settings=s), args.repeats)
        (td, rd), (tg, rg) = res["direct"], res["gram"]
        diff = np.linalg.norm(rd.theta_hat.entries - rg.theta_hat.entries)
        diff /= max(np.linalg.norm(rd.theta_hat.entries), 1e-300)
        p, N = d_a * d_x, n * L
        auto = "gram" if p <= 4096 and 4 * N >= 5 * p else "direct"
        print(f"{d_a:>4} {d_x:>4} {n:>5} {L:>2} {td:>10.4f} {tb:>10.4f} {tg:>10.4f} "
              f"{td / tg:>8.2f} {diff:>9.1e} {auto}")


if __name__ == "__main__":
    main()
