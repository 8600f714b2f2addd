"""Command-line interface: run experiments, sweep configs, inspect the
kernel-regime oracle, and render reports.

Exit codes: 0 on success, 2 on configuration or usage errors, 3 when a
run diverged numerically (its partial records are still persisted).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import NtkLabError, NumericalError, UsageError
from .metrics_io import read_metrics_csv, read_run_meta, write_run_meta
from .oracle import eigenmode_decay, evolve_residuals, lazy_training_check
from .probe import GramMatrix
from .report import plot_metrics, reactivation_stats, stats_mapping
from .runner import (
    parse_config_file,
    probe_setup,
    run_and_persist,
    sweep_experiments,
)

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _overrides(args) -> dict[str, str]:
    out: dict[str, str] = {}
    if args.seed is not None:
        out["seed"] = str(args.seed)
    if args.out is not None:
        out["out"] = str(args.out)
    return out


def _cmd_run(args) -> int:
    cfg = parse_config_file(args.config, overrides=_overrides(args))
    result = run_and_persist(cfg)
    print(f"run: {len(result.records)} records -> {cfg.out} "
          f"[{result.status}]")
    if result.poisoned:
        print(f"run: diverged at iteration {result.poison_iteration}; "
              f"partial records persisted", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_sweep(args) -> int:
    key, eq, values_text = args.vary.partition("=")
    if not eq or not key or not values_text:
        raise UsageError("--vary expects key=value1,value2,...")
    values = [v for v in values_text.split(",") if v]
    if len(values) < 2:
        raise UsageError("--vary needs at least two values")
    cfg = parse_config_file(args.config, overrides=_overrides(args))
    results = sweep_experiments(cfg, key.strip(), values, base_out=args.out)
    poisoned = [v for v, r in results if r.poisoned]
    for value, result in results:
        print(f"sweep {key}={value}: {len(result.records)} records "
              f"-> {result.config.out} [{result.status}]")
    if poisoned:
        print(f"sweep: diverged for {key} in {{{', '.join(poisoned)}}}",
              file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _parse_floats(text: str, flag: str) -> np.ndarray:
    try:
        vals = np.array([float(v) for v in text.split(",") if v])
    except ValueError as exc:
        raise UsageError(f"{flag}: {exc}") from None
    if vals.size == 0:
        raise UsageError(f"{flag} needs at least one number")
    return vals


def _cmd_oracle_decay(args) -> int:
    lams = _parse_floats(args.eigenvalues, "--eigenvalues")
    if np.any(lams < 0):
        raise UsageError("--eigenvalues must be nonnegative (PSD kernel)")
    e0 = (
        np.ones(lams.size)
        if args.residual is None
        else _parse_floats(args.residual, "--residual")
    )
    kernel = GramMatrix(np.diag(lams))
    trajectory = evolve_residuals(e0, kernel, args.eta, args.steps)
    print("# step residual_norm")
    for state in trajectory:
        print(f"{state.t} {state.norm:.17g}")
    modes = eigenmode_decay(e0, kernel.spectrum(), args.eta, args.steps)
    print("# eigenvalue final_mode_magnitude")
    for lam, mag in zip(kernel.spectrum().eigenvalues, np.abs(modes)):
        print(f"{lam:.17g} {mag:.17g}")
    return EXIT_OK


def _cmd_oracle_lazy(args) -> int:
    overrides = {} if args.seed is None else {"seed": str(args.seed)}
    cfg = parse_config_file(args.config, overrides=overrides)
    network, params, probe = probe_setup(cfg)
    eta = args.eta if args.eta is not None else cfg.lr
    report = lazy_training_check(network, params, probe, eta, args.steps)
    print(f"eta = {report.eta:.17g}")
    print(f"steps = {report.steps}")
    print(f"completed_steps = {report.completed_steps}")
    print(f"max_deviation = {report.max_deviation:.17g}")
    print(f"final_deviation = {report.final_deviation:.17g}")
    if report.completed_steps < report.steps:
        print("status = diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_report_plot(args) -> int:
    out = plot_metrics(args.inputs, args.metric, args.out, labels=args.label)
    print(f"plot: {out}")
    return EXIT_OK


def _default_stats_window(csv_path: Path) -> int | None:
    """One epoch of probe steps, from the run.meta next to the CSV."""
    meta_path = csv_path.parent / "run.meta"
    if not meta_path.exists():
        return None
    try:
        steps = int(read_run_meta(meta_path).get("probe_steps_per_epoch", ""))
    except (ValueError, NtkLabError):
        return None
    return steps if steps > 0 else None


def _cmd_report_stats(args) -> int:
    csv_path = Path(args.input)
    records = read_metrics_csv(csv_path)
    window = args.window
    if window is None:
        window = _default_stats_window(csv_path)
    stats = reactivation_stats(records, window=window,
                               recovery_tolerance=args.tol)
    mapping = stats_mapping(stats)
    out = Path(args.out) if args.out else csv_path.parent / "stats.meta"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_run_meta(mapping, out)
    for key, value in mapping.items():
        print(f"{key} = {value}")
    print(f"stats: {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ntklab",
        description="Train small networks through task switches and track "
                    "the empirical tangent kernel.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one experiment config")
    run_p.add_argument("--config", required=True, help="key = value config file")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the config's seed")
    run_p.add_argument("--out", default=None,
                       help="override the config's output directory")
    run_p.set_defaults(func=_cmd_run)

    sweep_p = sub.add_parser("sweep", help="run the config once per value")
    sweep_p.add_argument("--config", required=True)
    sweep_p.add_argument("--vary", required=True,
                         help="key=value1,value2,... (one run per value)")
    sweep_p.add_argument("--seed", type=int, default=None)
    sweep_p.add_argument("--out", default=None,
                         help="base directory; each run gets a subdirectory")
    sweep_p.set_defaults(func=_cmd_sweep)

    oracle_p = sub.add_parser("oracle",
                              help="inspect frozen-kernel training dynamics")
    oracle_sub = oracle_p.add_subparsers(dest="oracle_command", required=True)

    decay_p = oracle_sub.add_parser(
        "decay", help="residual decay under a fixed diagonal kernel")
    decay_p.add_argument("--eigenvalues", required=True,
                         help="comma-separated kernel eigenvalues")
    decay_p.add_argument("--eta", type=float, required=True)
    decay_p.add_argument("--steps", type=int, required=True)
    decay_p.add_argument("--residual", default=None,
                         help="initial residuals (default: all ones)")
    decay_p.set_defaults(func=_cmd_oracle_decay)

    lazy_p = oracle_sub.add_parser(
        "lazy", help="real training vs frozen-kernel prediction on the probe")
    lazy_p.add_argument("--config", required=True)
    lazy_p.add_argument("--steps", type=int, default=50)
    lazy_p.add_argument("--eta", type=float, default=None,
                        help="full-batch step size (default: config lr)")
    lazy_p.add_argument("--seed", type=int, default=None)
    lazy_p.set_defaults(func=_cmd_oracle_lazy)

    report_p = sub.add_parser("report", help="plots and reactivation stats")
    report_sub = report_p.add_subparsers(dest="report_command", required=True)

    plot_p = report_sub.add_parser("plot", help="plot one metric across runs")
    plot_p.add_argument("--metric", required=True)
    plot_p.add_argument("--in", dest="inputs", nargs="+", required=True,
                        metavar="CSV")
    plot_p.add_argument("--out", required=True, help=".svg or .pdf path")
    plot_p.add_argument("--label", nargs="+", default=None,
                        help="curve labels, one per CSV")
    plot_p.set_defaults(func=_cmd_report_plot)

    stats_p = report_sub.add_parser(
        "stats", help="per-switch drop/recovery statistics")
    stats_p.add_argument("--in", dest="input", required=True, metavar="CSV")
    stats_p.add_argument("--window", type=int, default=None,
                         help="probe records per side (default: one epoch, "
                              "from run.meta next to the CSV)")
    stats_p.add_argument("--tol", type=float, default=None,
                         help="absolute recovery tolerance "
                              "(default: 5%% of baseline)")
    stats_p.add_argument("--out", default=None,
                         help="stats file path (default: stats.meta next "
                              "to the CSV)")
    stats_p.set_defaults(func=_cmd_report_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"ntklab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except NtkLabError as exc:
        print(f"ntklab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"ntklab: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
