"""Command-line interface.

Subcommands
-----------
simulate        run an experiment from a TOML config (or rerun a manifest)
power           simulate, then report power-loss columns per cell
selection-bias  simulate, then fit convergence rates for SB_n and M_n
validate-g      check an allocation function against the design conditions
oracle-check    compare Monte Carlo estimates with exact enumeration

Exit codes: 0 success, 2 configuration error, 3 numerical or I/O error.
The CARCT_WORKERS environment variable, when set, overrides --workers.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import (load_toml, parse_allocation_doc, parse_experiment,
                     parse_oracle_options)
from .errors import BudgetExceededError, CarctError, ConfigError, NumericalError
from .oracle import chain_stationary, enumerate_exact, _is_time_homogeneous
from .procedures import validate_allocation_function
from .reports import config_from_manifest, emit_report, human_table, _fmt
from .simulator import rate_estimate, run_experiment

_EXIT_OK = 0
_EXIT_CONFIG = 2
_EXIT_NUMERIC = 3


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=None,
                     help="override master_seed from the config")
    sub.add_argument("--replications", type=int, default=None,
                     help="override replication count from the config")
    sub.add_argument("--out-dir", default=".", help="output directory")
    sub.add_argument("--workers", type=int, default=1,
                     help="worker processes (CARCT_WORKERS overrides)")
    sub.add_argument("--format", choices=("csv", "json"), default="csv",
                     dest="fmt", help="machine output format")


def _resolve_workers(args) -> int:
    env = os.environ.get("CARCT_WORKERS")
    if env is not None:
        try:
            workers = int(env)
        except ValueError:
            raise ConfigError(f"CARCT_WORKERS must be an integer, got {env!r}")
    else:
        workers = args.workers
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    return workers


def _load_config(args):
    manifest = getattr(args, "from_manifest", None)
    if manifest is not None:
        config = config_from_manifest(manifest)
    elif args.config is not None:
        config = parse_experiment(load_toml(args.config))
    else:
        raise ConfigError("either a config file or --from-manifest is required")
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError(f"--seed must be in [0, 2^64), got {args.seed}")
        config = dataclasses.replace(config, master_seed=args.seed)
    if args.replications is not None:
        if args.replications < 1:
            raise ConfigError(
                f"--replications must be >= 1, got {args.replications}")
        config = dataclasses.replace(config, replications=args.replications)
    return config


def _run_and_emit(args):
    config = _load_config(args)
    workers = _resolve_workers(args)
    t0 = time.perf_counter()
    summary = run_experiment(config, workers=workers)
    wall = time.perf_counter() - t0
    bundle = emit_report(summary, args.out_dir, fmt=args.fmt,
                         workers=workers, wall_time_s=wall)
    return summary, bundle


def _cmd_simulate(args) -> int:
    summary, bundle = _run_and_emit(args)
    print(human_table(summary))
    print(f"wrote {len(bundle.paths)} files to {bundle.out_dir}")
    return _EXIT_OK


def _cmd_power(args) -> int:
    summary, bundle = _run_and_emit(args)
    lines = ["procedure,n,mean_LossP,empirical_power,mean_conditional_power,mean_V_n"]
    for c in summary.cells:
        lines.append(",".join([
            c.procedure, str(c.n), _fmt(c.metrics["loss_p"].mean),
            _fmt(c.rejection_rate), _fmt(c.metrics["power"].mean),
            _fmt(c.metrics["v_n"].mean)]))
    target = Path(bundle.out_dir) / "power_summary.csv"
    target.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(human_table(summary))
    for line in lines:
        print(line.replace(",", "  "))
    print(f"wrote {len(bundle.paths) + 1} files to {bundle.out_dir}")
    return _EXIT_OK


def _cmd_selection_bias(args) -> int:
    summary, bundle = _run_and_emit(args)
    labels = []
    for c in summary.cells:
        if c.procedure not in labels:
            labels.append(c.procedure)
    n_points = len(summary.config.n_grid)
    print("procedure  slope[log(SB-1/2) vs log n]  slope[log E M_n vs log n]")
    for label in labels:
        sb_series = [(n, mean - 0.5) for n, mean, _se
                     in summary.series("sb_rb", label)]
        m_series = [(n, mean) for n, mean, _se in summary.series("m_n", label)]
        if n_points < 3:
            print(f"{label}  (need >= 3 n points for a rate fit, "
                  f"got {n_points})")
            continue
        parts = [label]
        for series in (sb_series, m_series):
            try:
                fit = rate_estimate(series)
                parts.append(f"{fit.slope:.4g} (se {fit.stderr:.4g})")
            except (ConfigError, NumericalError) as exc:
                parts.append(f"no fit ({exc})")
        print("  ".join(parts))
    print(f"wrote {len(bundle.paths)} files to {bundle.out_dir}")
    return _EXIT_OK


def _cmd_validate_g(args) -> int:
    doc = load_toml(args.config)
    fn, n_grid, x_grid = parse_allocation_doc(doc)
    report = validate_allocation_function(fn, n_grid=n_grid, x_grid=x_grid)
    rows = [("balance_direction", report.balance_direction),
            ("strong_correction", report.strong_correction),
            ("vanishing_bias", report.vanishing_bias)]
    for name, ok in rows:
        print(f"{name:20s}  {'pass' if ok else 'FAIL'}")
    ratios = report.detail["ratios"]
    devs = report.detail["deviations"]
    print(f"worst-case correction ratio at finest scale: {ratios[-1]:.4g}")
    print(f"largest deviation from 1/2 at finest scale:  {devs[-1]:.4g}")
    return _EXIT_OK


def _cmd_oracle_check(args) -> int:
    doc = load_toml(args.config)
    config = parse_experiment(doc)
    opts = parse_oracle_options(doc)
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    reps = args.replications if args.replications is not None else 200_000
    if reps < 1:
        raise ConfigError(f"--replications must be >= 1, got {reps}")
    workers = _resolve_workers(args)
    horizon, radius = opts["n"], opts["radius"]
    config = dataclasses.replace(
        config, n_grid=(horizon,), replications=reps,
        snapshot_points=())
    summary = run_experiment(config, workers=workers)
    for proc_index, proc in enumerate(config.procedures):
        exact = enumerate_exact(proc, config.covariates, horizon)
        cell = summary.cells[[c.proc_index for c in summary.cells].index(proc_index)]
        print(f"procedure {proc.label}, n={horizon}, replications={reps}")
        m_mc = cell.metrics["m_n"]
        print(f"  E[M_n]  exact {exact.m_mean:.6f}  mc {m_mc.mean:.6f}  "
              f"(se {m_mc.se:.2g})")
        sb_mc = cell.metrics["sb_rb"]
        print(f"  SB_n    exact {exact.sb_n:.6f}  mc {sb_mc.mean:.6f}  "
              f"(se {sb_mc.se:.2g})")
        total = sum(cell.d_counts.values())
        support = sorted(set(exact.d_dist) | set(cell.d_counts))
        for d in support:
            p_exact = exact.d_dist.get(d, 0.0)
            cnt = cell.d_counts.get(d, 0)
            p_mc = cnt / total
            se = float(np.sqrt(max(p_mc * (1.0 - p_mc), 1e-300) / total))
            print(f"  P(D={d:+d})  exact {p_exact:.6f}  mc {p_mc:.6f}  "
                  f"(se {se:.2g})")
        if _is_time_homogeneous(proc):
            stat = chain_stationary(proc, config.covariates, radius=radius)
            print(f"  stationary SB limit {stat.sb_limit:.6f}  "
                  f"(truncation mass {stat.truncation_mass:.2g})")
    return _EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carct",
        description="covariate-adaptive randomization trial simulator")
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("simulate", help="run an experiment from a config")
    sub.add_argument("config", nargs="?", default=None, help="TOML config file")
    sub.add_argument("--from-manifest", default=None, metavar="PATH",
                     help="rerun the experiment recorded in a manifest.json")
    _add_run_flags(sub)
    sub.set_defaults(func=_cmd_simulate)

    sub = subs.add_parser("power", help="simulate and report power loss")
    sub.add_argument("config", nargs="?", default=None, help="TOML config file")
    sub.add_argument("--from-manifest", default=None, metavar="PATH")
    _add_run_flags(sub)
    sub.set_defaults(func=_cmd_power)

    sub = subs.add_parser("selection-bias",
                          help="simulate and fit SB/M_n convergence rates")
    sub.add_argument("config", nargs="?", default=None, help="TOML config file")
    sub.add_argument("--from-manifest", default=None, metavar="PATH")
    _add_run_flags(sub)
    sub.set_defaults(func=_cmd_selection_bias)

    sub = subs.add_parser("validate-g",
                          help="check an allocation function's conditions")
    sub.add_argument("config", help="TOML file with an [allocation] section")
    sub.set_defaults(func=_cmd_validate_g)

    sub = subs.add_parser("oracle-check",
                          help="Monte Carlo vs exact enumeration at small n")
    sub.add_argument("config", help="TOML config file with [oracle] options")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--replications", type=int, default=None)
    sub.add_argument("--workers", type=int, default=1)
    sub.set_defaults(func=_cmd_oracle_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, BudgetExceededError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except (NumericalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_NUMERIC
    except CarctError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
