#!/usr/bin/env python3
"""Benchmark the compiled vs pure-Python coordinate-descent kernels.

Runs the graphical lasso on sample covariances of synthetic grid voltage
data at a few problem sizes and reports wall time per kernel plus the
maximum entry difference between the two solutions.

Usage: python benchmarks/bench_glasso.py [--sizes 20,40,56] [--n 2000]
"""

import argparse
import time

import numpy as np

from gridtopo import (
    InjectionStatistics,
    generate_grid,
    reduced_laplacians,
    sample_covariance,
    sample_voltages,
)
from gridtopo.glasso import active_kernel, graphical_lasso


def bench(buses: int, n: int, lam_scale: float, repeats: int):
    grid = generate_grid("meshed", buses, loops=2, min_cycle=min(7, buses - 2), seed=buses)
    lap = reduced_laplacians(grid)
    stats = InjectionStatistics.uniform(grid.n)
    cov = sample_covariance(sample_voltages(lap, stats, n, seed=1))
    off = cov.copy()
    np.fill_diagonal(off, 0.0)
    lam = lam_scale * np.abs(off).max()

    results = {}
    for kernel in ("cython", "python"):
        try:
            active_kernel(kernel)
        except Exception:
            results[kernel] = (float("nan"), None)
            continue
        best = float("inf")
        conc = None
        for _ in range(repeats):
            t0 = time.perf_counter()
            conc = graphical_lasso(cov, lam, tol=1e-6, bus_order=lap.bus_order, kernel=kernel)
            best = min(best, time.perf_counter() - t0)
        results[kernel] = (best, conc)
    return lam, results


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="20,40,56", help="comma-separated bus counts")
    parser.add_argument("--n", type=int, default=2000, help="samples per covariance")
    parser.add_argument("--lam-scale", type=float, default=0.05)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    print(f"default kernel: {active_kernel()}")
    header = f"{'buses':>6} {'dim':>5} {'lambda':>10} {'cython_s':>10} {'python_s':>10} {'speedup':>8} {'max_diff':>10}"
    print(header)
    print("-" * len(header))
    for buses in (int(s) for s in args.sizes.split(",")):
        lam, results = bench(buses, args.n, args.lam_scale, args.repeats)
        t_cy, conc_cy = results["cython"]
        t_py, conc_py = results["python"]
        diff = float("nan")
        if conc_cy is not None and conc_py is not None:
            diff = float(np.abs(conc_cy.j - conc_py.j).max())
        speedup = t_py / t_cy if t_cy and t_cy > 0 else float("nan")
        print(
            f"{buses:>6} {2 * (buses - 1):>5} {lam:>10.3e} {t_cy:>10.4f} {t_py:>10.4f} "
            f"{speedup:>8.1f} {diff:>10.2e}"
        )


if __name__ == "__main__":
    main()
