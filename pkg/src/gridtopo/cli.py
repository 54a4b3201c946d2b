"""Command-line harness.

Subcommands: gen-grid, sample, estimate, learn, recover-params, detect,
sweep, threshold-sensitivity. Configuration comes from an optional JSON
file (--config) with command-line flags taking precedence. Exit codes:
0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import glasso
from .detect import detect_change, export_report
from .errors import NumericalError, ValidationError
from .estimator import (
    analytic_concentration,
    default_ridge,
    direct_concentration,
    export_concentration,
    gamma_thresholds,
    import_concentration,
    sample_covariance,
)
from .generate import generate_grid
from .grid import load_grid, reduced_laplacians, save_grid, structure_report
from .sampler import (
    InjectionStatistics,
    NoiseStatistics,
    add_noise,
    analytic_voltage_covariance,
    export_samples,
    import_samples,
    make_correlated_stats,
    sample_voltages,
)
from .sweep import DetectConfig, ExperimentConfig, detect_sweep, run_sweep, threshold_sensitivity
from .topology import (
    export_estimate,
    learn_neighborhood,
    learn_sign_rule,
    recover_parameters,
    score,
    threshold_by_gap,
)

__all__ = ["main"]


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v)


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v)


def _range(text: str) -> tuple[float, float]:
    lo, hi = (float(v) for v in text.split(","))
    return lo, hi


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc


def _stats_for(grid, sigma, sigma_pq, epsilon):
    stats = InjectionStatistics.uniform(grid.n, variance=sigma, sigma_pq=sigma_pq)
    if epsilon:
        stats = make_correlated_stats(grid, stats, epsilon)
    return stats


def cmd_gen_grid(args) -> int:
    grid = generate_grid(
        args.kind,
        args.buses,
        loops=args.loops,
        min_cycle=args.min_cycle,
        seed=args.seed,
        r_range=args.r_range,
        x_range=args.x_range,
        min_non_leaves=args.min_non_leaves,
    )
    save_grid(grid, args.out)
    report = structure_report(grid)
    print(
        f"wrote {args.out}: {len(grid.buses)} buses, {len(grid.lines)} lines, "
        f"min cycle length {report.min_cycle_length}"
    )
    return 0


def cmd_sample(args) -> int:
    grid = load_grid(args.grid)
    lap = reduced_laplacians(grid)
    stats = _stats_for(grid, args.sigma, args.sigma_pq, args.epsilon)
    samples = sample_voltages(lap, stats, args.n, args.seed, offset=args.offset)
    if args.noise > 0:
        signal_var = np.diag(analytic_voltage_covariance(lap, stats))
        noise = NoiseStatistics.relative(signal_var, args.noise)
        samples = add_noise(samples, noise, args.noise_seed)
    samples = replace(samples, grid_sha256=grid.sha256)
    export_samples(samples, args.out)
    print(f"wrote {args.out}: {samples.n} samples x {samples.samples.shape[1]} columns")
    return 0


def cmd_estimate(args) -> int:
    bus_order = None
    if args.grid:
        bus_order = load_grid(args.grid).non_reference
    samples = import_samples(args.samples, bus_order=bus_order)
    cov = sample_covariance(samples)
    if args.method == "glasso":
        lam = args.lam
        if lam is None:
            lam = glasso.default_lambda(samples.n, cov.shape[0])
        conc = glasso.graphical_lasso(
            cov, lam, tol=args.tol, max_iter=args.max_iter, bus_order=samples.bus_order
        )
    else:
        ridge = args.ridge if args.ridge is not None else default_ridge(cov, samples.n)
        conc = direct_concentration(cov, ridge, bus_order=samples.bus_order)
    export_concentration(conc, args.out)
    print(f"wrote {args.out} ({conc.provenance})")
    return 0


def cmd_learn(args) -> int:
    conc = import_concentration(args.concentration)
    truth = load_grid(args.truth) if args.truth else None
    tau1, tau2 = args.tau1, args.tau2
    if truth is not None and (tau1 is None or tau2 is None):
        stats = InjectionStatistics.uniform(truth.n, variance=args.sigma, sigma_pq=args.sigma_pq)
        gamma1, gamma2 = gamma_thresholds(
            analytic_concentration(reduced_laplacians(truth), stats)
        )
        tau1 = gamma1 / 2 if tau1 is None else tau1
        tau2 = gamma2 / 2 if tau2 is None else tau2
    if args.alg == "neighborhood":
        if tau1 is None:
            n = conc.n
            off = ~np.eye(n, dtype=bool)
            tau1 = threshold_by_gap(conc.j_vv[off])
        estimate = learn_neighborhood(conc, tau1)
    else:
        if tau2 is None:
            n = conc.n
            off = ~np.eye(n, dtype=bool)
            s = conc.sign_sum()[off]
            tau2 = threshold_by_gap(-s[s < 0])
        estimate = learn_sign_rule(conc, tau2)
    error = score(estimate, truth) if truth is not None else None
    export_estimate(estimate, args.out, error=error)
    msg = f"wrote {args.out}: {len(estimate.edges)} edges"
    if error is not None:
        msg += f", error {error:.4f}"
    print(msg)
    return 0


def cmd_recover_params(args) -> int:
    try:
        voltage_cov = np.loadtxt(args.voltage_cov, delimiter=",", ndmin=2)
        injection_cov = np.loadtxt(args.injection_cov, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read covariance file: {exc}") from exc
    recovered = recover_parameters(voltage_cov, injection_cov)
    payload = {
        "residual": recovered.residual,
        "lines": [
            {"from": a, "to": b, "g": g, "beta": beta}
            for (a, b), (g, beta) in sorted(recovered.lines.items())
        ],
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(f"wrote {args.out}: {len(recovered.lines)} lines, residual {recovered.residual:.3e}")
    return 0


def cmd_detect(args) -> int:
    if args.before_conc or args.after_conc:
        if not (args.before_conc and args.after_conc and args.tau3):
            raise ValidationError("matrix mode needs --before-conc, --after-conc and --tau3")
        report = detect_change(
            import_concentration(args.before_conc),
            import_concentration(args.after_conc),
            args.tau3,
        )
        export_report(report, args.out)
        print(f"wrote {args.out}: {report.kind} {report.endpoints or ''}")
        return 0
    payload = _load_config(args.config)
    config = DetectConfig.from_dict(
        payload,
        before=args.before,
        after=args.after,
        sample_sizes=args.n,
        repetitions=args.reps,
        seed=args.seed,
        noise=args.noise,
        tau3=args.tau3,
        out=args.out,
    )
    if config.out is None:
        raise ValidationError("detect needs an output directory (--out)")
    result, analytic_report = detect_sweep(config)
    result.write(config.out)
    export_report(analytic_report, Path(config.out) / "analytic_report.json")
    print(f"wrote {config.out}: analytic verdict {analytic_report.kind}")
    return 0


def cmd_sweep(args) -> int:
    payload = _load_config(args.config)
    config = ExperimentConfig.from_dict(
        payload,
        grid=args.grid,
        sample_sizes=args.n,
        repetitions=args.reps,
        seed=args.seed,
        noise=args.noise,
        epsilon=args.epsilon,
        estimator=args.estimator,
        lam=args.lam,
        tau1=args.tau1,
        tau2=args.tau2,
        out=args.out,
    )
    if config.grid is None:
        raise ValidationError("sweep needs a grid (--grid or config)")
    if config.out is None:
        raise ValidationError("sweep needs an output directory (--out)")
    result = run_sweep(config)
    result.write(config.out)
    ok = sum(1 for r in result.rows if r["status"] == "ok")
    print(f"wrote {config.out}: {len(result.rows)} rows ({ok} ok)")
    return 0


def cmd_threshold_sensitivity(args) -> int:
    payload = _load_config(args.config)
    config = ExperimentConfig.from_dict(
        payload,
        grid=args.grid,
        sample_sizes=args.n,
        repetitions=args.reps,
        seed=args.seed,
        noise=args.noise,
        epsilon=args.epsilon,
        out=args.out,
    )
    if config.grid is None or config.out is None:
        raise ValidationError("threshold-sensitivity needs --grid and --out")
    result = threshold_sensitivity(config, args.multipliers)
    result.write(config.out)
    print(f"wrote {config.out}: {len(result.rows)} rows")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridtopo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-grid", help="generate a synthetic grid file")
    p.add_argument("--kind", choices=("path", "tree", "meshed"), required=True)
    p.add_argument("--buses", type=int, required=True)
    p.add_argument("--loops", type=int, default=0)
    p.add_argument("--min-cycle", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--r-range", type=_range, default=(0.05, 0.3))
    p.add_argument("--x-range", type=_range, default=(0.05, 0.3))
    p.add_argument("--min-non-leaves", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_grid)

    p = sub.add_parser("sample", help="generate voltage fluctuation samples")
    p.add_argument("--grid", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--offset", type=int, default=0)
    p.add_argument("--sigma", type=float, default=1e-2)
    p.add_argument("--sigma-pq", type=float, default=0.0)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--noise-seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("estimate", help="estimate the concentration matrix from samples")
    p.add_argument("--samples", required=True)
    p.add_argument("--grid", default=None, help="optional grid file to validate bus order")
    p.add_argument("--method", choices=("direct", "glasso"), default="direct")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--ridge", type=float, default=None)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("learn", help="recover topology from a concentration matrix")
    p.add_argument("--concentration", required=True)
    p.add_argument("--alg", choices=("neighborhood", "sign"), required=True)
    p.add_argument("--tau1", type=float, default=None)
    p.add_argument("--tau2", type=float, default=None)
    p.add_argument("--truth", default=None, help="grid file for scoring and default thresholds")
    p.add_argument("--sigma", type=float, default=1e-2)
    p.add_argument("--sigma-pq", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("recover-params", help="reconstruct line parameters from covariances")
    p.add_argument("--voltage-cov", required=True)
    p.add_argument("--injection-cov", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recover_params)

    p = sub.add_parser("detect", help="detect a single line change")
    p.add_argument("--config", default=None)
    p.add_argument("--before", default=None, help="grid file before the event")
    p.add_argument("--after", default=None, help="grid file after the event")
    p.add_argument("--before-conc", default=None, help="concentration CSV before (matrix mode)")
    p.add_argument("--after-conc", default=None, help="concentration CSV after (matrix mode)")
    p.add_argument("--n", type=_int_list, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--tau3", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("sweep", help="sample-size sweep of the learning pipeline")
    p.add_argument("--config", default=None)
    p.add_argument("--grid", default=None)
    p.add_argument("--n", type=_int_list, default=None, help="comma-separated sample sizes")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--estimator", choices=("direct", "glasso"), default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--tau1", type=float, default=None)
    p.add_argument("--tau2", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("threshold-sensitivity", help="errors under scaled thresholds")
    p.add_argument("--config", default=None)
    p.add_argument("--grid", default=None)
    p.add_argument("--n", type=_int_list, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--multipliers", type=_float_list, default=(0.8, 1.0, 1.2))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_threshold_sensitivity)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
