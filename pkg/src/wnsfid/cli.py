"""Command line interface.

Subcommands: simulate, arx, wnsf, asymptotic, montecarlo.  Exit codes:
0 success, 1 configuration/usage error, 2 estimator failure in single-run
commands.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import analysis, arx, harness, lti, wnsf
from .errors import ConfigError, WnsfError


class _Parser(argparse.ArgumentParser):
    # argparse would sys.exit(2) on bad flags; route usage errors to exit 1.
    def error(self, message):
        raise ConfigError(message)


def _add_system_flags(p):
    p.add_argument("--g-num", help="dynamic model numerator coefficients, comma separated")
    p.add_argument("--g-den", help="dynamic model denominator coefficients")
    p.add_argument("--h-num", help="noise model numerator coefficients")
    p.add_argument("--h-den", help="noise model denominator coefficients")
    p.add_argument("--k-num", help="controller numerator coefficients")
    p.add_argument("--k-den", help="controller denominator coefficients")
    p.add_argument("--lambda-r", type=float, help="reference variance")
    p.add_argument("--sigma2", type=float, help="noise variance")


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _parse_grid(text: str) -> int:
    if "^" in text:
        base, exp = text.split("^", 1)
        return int(base) ** int(exp)
    return int(text)


def _system_overrides(args) -> dict:
    out = {}
    for key in ("g_num", "g_den", "h_num", "h_den", "k_num", "k_den"):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = _floats(val)
    for key in ("lambda_r", "sigma2"):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wnsfid",
                     description="Weighted null-space fitting for linear "
                                 "system identification")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a dataset CSV")
    p.add_argument("--scenario", default="fig1_closedloop",
                   choices=harness.SCENARIO_NAMES)
    p.add_argument("--n-samples", type=int, required=True)
    p.add_argument("--run-index", dest="run_index", type=int, default=0,
                   help="Monte Carlo run index for stream derivation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_system_flags(p)

    p = sub.add_parser("arx", help="high-order ARX estimate from a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--order", type=int, help="ARX order n (default: order rule)")
    p.add_argument("--known-initial", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--r-out", help="also write the Gram matrix as dense CSV")

    p = sub.add_parser("wnsf", help="parametric estimate from a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--order", type=int, help="ARX order n (default: order rule)")
    p.add_argument("--mf", type=int, default=2)
    p.add_argument("--ml", type=int, default=2)
    p.add_argument("--mc", type=int, default=0)
    p.add_argument("--md", type=int, default=0)
    p.add_argument("--full", action="store_true",
                   help="fully parametric variant (requires --mc/--md > 0)")
    p.add_argument("--iterate", action="store_true")
    p.add_argument("--max-iter", type=int, default=wnsf.DEFAULT_MAX_ITER)
    p.add_argument("--tol", type=float, default=wnsf.DEFAULT_TOL)
    p.add_argument("--known-initial", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("asymptotic", help="asymptotic accuracy report")
    p.add_argument("--scenario", default="fig1_closedloop",
                   choices=harness.SCENARIO_NAMES)
    p.add_argument("--grid", default="2^14", help="grid size, e.g. 16384 or 2^14")
    p.add_argument("--N", default="", help="sample sizes for the MSE printout")
    p.add_argument("--out", help="write the report as CSV")
    _add_system_flags(p)

    p = sub.add_parser("montecarlo", help="run a Monte Carlo batch")
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--scenario", choices=harness.SCENARIO_NAMES)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", type=int)
    p.add_argument("--sample-sizes", help="comma separated sample sizes")
    p.add_argument("--order", type=int, help="ARX order override")
    p.add_argument("--iterate", action="store_true", default=None)
    p.add_argument("--known-initial", action="store_true", default=None)
    p.add_argument("--mc", type=int, help="noise numerator order (full variant)")
    p.add_argument("--md", type=int, help="noise denominator order (full variant)")
    return parser


def _scenario_config(args, **extra) -> harness.ExperimentConfig:
    overrides = _system_overrides(args)
    overrides.update(extra)
    return harness.build_config(scenario=args.scenario, **overrides)


def _cmd_simulate(args) -> int:
    cfg = _scenario_config(args, sample_sizes=(args.n_samples,), seed=args.seed,
                           arx_order=1)  # order irrelevant for simulation
    data = harness.simulate_run(cfg, args.n_samples, args.run_index)
    lti.save_dataset(data, args.out)
    print(f"wrote {data.n_samples} samples to {args.out}")
    return 0


def _cmd_arx(args) -> int:
    data = lti.load_dataset(args.data, known_initial=args.known_initial)
    est = arx.estimate_arx(data, args.order, known_initial=args.known_initial)
    arx.save_arx_estimate(est, args.out, r_path=args.r_out)
    print(f"order {est.n}, sigma2_hat {est.sigma2_hat:.6g}, "
          f"condition estimate {est.condition_estimate:.3e}")
    return 0


def _cmd_wnsf(args) -> int:
    data = lti.load_dataset(args.data, known_initial=args.known_initial)
    est = arx.estimate_arx(data, args.order, known_initial=args.known_initial)
    ms = wnsf.ModelStructure(m_l=args.ml, m_f=args.mf,
                             m_c=args.mc if args.full else 0,
                             m_d=args.md if args.full else 0)
    if args.full and ms.is_semi_parametric:
        raise ConfigError("--full requires --mc/--md greater than zero")
    if not ms.is_semi_parametric:
        result = wnsf.fully_parametric_wnsf(est, ms, args.max_iter, args.tol)
    elif args.iterate:
        result = wnsf.iterate_wnsf(est, ms, args.max_iter, args.tol)
    else:
        result = wnsf.step3_wls(est, wnsf.step2_ls(est, ms).theta, ms)
    wnsf.save_wnsf_result(result, args.out)
    vec = np.array2string(result.theta.to_vector(), precision=6)
    print(f"stage {result.stage}, iterations {result.iterations}, "
          f"converged {result.converged}, theta {vec}")
    return 0


def _cmd_asymptotic(args) -> int:
    cfg = _scenario_config(args, arx_order=1)
    H = cfg.noise_model()
    if H is None:
        raise ConfigError("asymptotic report needs a fixed rational noise model")
    report = analysis.asymptotic_covariance(
        cfg.dynamic_model(), H, cfg.controller(), lambda_r=cfg.lambda_r,
        sigma2=cfg.sigma2, ms=wnsf.ModelStructure(m_l=cfg.m_l, m_f=cfg.m_f),
        grid_size=_parse_grid(args.grid))
    print(f"sigma2 * trace(M^-1) = {report.noise_variance * report.M_inv_trace:.6g} "
          f"(grid {report.grid_size})")
    for N in (int(v) for v in args.N.split(",") if v):
        print(f"N={N}: asymptotic MSE = {report.asymptotic_mse_at(N):.6g}")
    if args.out:
        save_covariance_report(report, args.out)
    return 0


def save_covariance_report(report, path) -> None:
    """Dense M rows first, then the scalar fields."""
    k = report.M.shape[0]
    with open(path, "w", newline="\n") as fh:
        fh.write(f"rows,{k}\n")
        for i in range(k):
            fh.write(",".join(repr(float(v)) for v in report.M[i]) + "\n")
        fh.write(f"m_inv_trace,{report.M_inv_trace!r}\n")
        fh.write(f"grid_size,{report.grid_size}\n")
        fh.write(f"noise_variance,{report.noise_variance!r}\n")


def _cmd_montecarlo(args) -> int:
    overrides = dict(runs=args.runs, seed=args.seed, parallel=args.parallel,
                     arx_order=args.order, iterate=args.iterate,
                     known_initial=args.known_initial,
                     m_c=args.mc, m_d=args.md)
    if args.sample_sizes:
        overrides["sample_sizes"] = tuple(int(v) for v in args.sample_sizes.split(","))
    cfg = harness.build_config(scenario=args.scenario, config_file=args.config,
                               **overrides)
    records = harness.run_monte_carlo(cfg)
    summary = harness.aggregate(records)
    paths = harness.emit_outputs(summary, records, args.out,
                                 theoretical=harness.theoretical_mse_curve(cfg))
    n_failed = sum(rec.failed for rec in records)
    print(f"{len(records)} runs ({n_failed} failed) -> {paths['runs']}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "arx": _cmd_arx,
    "wnsf": _cmd_wnsf,
    "asymptotic": _cmd_asymptotic,
    "montecarlo": _cmd_montecarlo,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except WnsfError as exc:
        print(f"estimator error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
