"""Command-line front end: run experiments, compare A/B CSVs, analyze traces.

Exit codes: 0 success, 2 configuration error, 3 stalled run (liveness
failure).  The default seed can be overridden with the COREFILL_SEED
environment variable; an explicit --seed beats both.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

from .live import start_live_run
from .metrics import CSV_COLUMNS, MetricsReport, append_csv, read_csv
from .runtime import ConfigError, RuntimeConfig, StalledError, start_sim_run
from .simkernel import InvalidConfigError, SimConfig
from .trace import TraceError, load_trace, save_trace, trace_stats
from .workloads import ConfigParseError, InvalidSpecError, generate, load_spec

__all__ = ["main", "cmd_run", "cmd_compare", "cmd_trace_stats"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STALLED = 3

SEED_ENV = "COREFILL_SEED"


class MismatchedRunsError(ValueError):
    """Baseline and comparison CSVs do not describe the same runs."""


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 1
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def cmd_run(args: argparse.Namespace) -> int:
    spec = load_spec(args.config)
    graph = generate(spec)
    seed = args.seed if args.seed is not None else _default_seed()
    umt = args.umt == "on"
    config = RuntimeConfig(umt_enabled=umt)
    if args.mode == "sim":
        sim_config = SimConfig(
            n_cores=args.cores,
            rng_seed=seed,
            trace=args.trace is not None,
            timeslice_us=args.timeslice_us,
        )
        run = start_sim_run(config, sim_config, graph, workload_id=spec.workload_id)
        report = run.run_to_completion()
        records = run.sim.trace_records
    else:
        run = start_live_run(
            config, args.cores, graph, workload_id=spec.workload_id, trace=args.trace is not None
        )
        report = run.run_to_completion()
        records = run.trace_records
    if args.trace is not None:
        save_trace(args.trace, records)
    if args.out is not None:
        append_csv(args.out, report)
    print(
        f"{report.workload_id} mode={report.mode} umt={'on' if report.umt else 'off'} "
        f"seed={report.seed} cores={report.cores} makespan_us={report.makespan_us} "
        f"utilization={report.utilization_mean:.4f} oversub={report.oversub_mean:.4f} "
        f"tasks={report.tasks_completed}"
    )
    return EXIT_OK


def _index_rows(rows: list[dict[str, str]], label: str) -> dict[tuple[str, str], dict[str, str]]:
    indexed: dict[tuple[str, str], dict[str, str]] = {}
    for row in rows:
        key = (row["workload_id"], row["seed"])
        if key in indexed:
            raise MismatchedRunsError(f"{label}: duplicate run for {key}")
        indexed[key] = row
    return indexed


def cmd_compare(args: argparse.Namespace) -> int:
    base_rows = _index_rows(read_csv(args.baseline_csv), "baseline")
    test_rows = _index_rows(read_csv(args.umt_csv), "comparison")
    if set(base_rows) != set(test_rows):
        missing = set(base_rows) ^ set(test_rows)
        raise MismatchedRunsError(f"run sets differ; unmatched: {sorted(missing)}")
    if not base_rows:
        raise MismatchedRunsError("no runs to compare")
    long_rows: list[dict[str, str]] = []
    for key in sorted(base_rows):
        base, test = base_rows[key], test_rows[key]
        base_makespan = float(base["makespan_us"])
        test_makespan = float(test["makespan_us"])
        base_tp = float(base["tasks_completed"]) / base_makespan if base_makespan else 0.0
        test_tp = float(test["tasks_completed"]) / test_makespan if test_makespan else 0.0
        speedup_pct = (test_tp / base_tp - 1.0) * 100.0 if base_tp else 0.0
        util_delta = float(test["utilization_mean"]) - float(base["utilization_mean"])
        print(
            f"{key[0]} seed={key[1]}: speedup={speedup_pct:+.1f}% "
            f"utilization {float(base['utilization_mean']):.4f} -> {float(test['utilization_mean']):.4f} "
            f"oversub {float(base['oversub_mean']):.4f} -> {float(test['oversub_mean']):.4f}"
        )
        for metric in ("makespan_us", "utilization_mean", "oversub_mean", "context_switches"):
            long_rows.append(
                {"workload_id": key[0], "seed": key[1], "version": "baseline",
                 "metric": metric, "value": base[metric]}
            )
            long_rows.append(
                {"workload_id": key[0], "seed": key[1], "version": "umt",
                 "metric": metric, "value": test[metric]}
            )
        long_rows.append(
            {"workload_id": key[0], "seed": key[1], "version": "umt",
             "metric": "speedup_pct", "value": f"{speedup_pct:.4f}"}
        )
        long_rows.append(
            {"workload_id": key[0], "seed": key[1], "version": "umt",
             "metric": "utilization_delta", "value": f"{util_delta:.6f}"}
        )
    if args.out is not None:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="") as handle:
            writer = csv.DictWriter(
                handle, fieldnames=["workload_id", "seed", "version", "metric", "value"]
            )
            writer.writeheader()
            writer.writerows(long_rows)
    return EXIT_OK


def cmd_trace_stats(args: argparse.Namespace) -> int:
    records = load_trace(args.trace)
    stats = trace_stats(records)
    cores = sorted(
        set(stats.per_core_blocked)
        | set(stats.per_core_unblocked)
        | set(stats.per_core_dispatches)
        | set(stats.per_core_oversub_us)
    )
    print(f"span_us={stats.span_us} records={len(records)}")
    for core in cores:
        print(
            f"core {core}: blocked={stats.per_core_blocked.get(core, 0)} "
            f"unblocked={stats.per_core_unblocked.get(core, 0)} "
            f"dispatches={stats.per_core_dispatches.get(core, 0)} "
            f"oversub_us={stats.per_core_oversub_us.get(core, 0)} "
            f"oversub_periods={stats.per_core_oversub_periods.get(core, 0)} "
            f"oversub_frac={stats.oversub_fraction(core):.4f}"
        )
    print(
        f"totals: blocked={stats.blocked_total} unblocked={stats.unblocked_total} "
        f"dispatches={stats.dispatch_total} surrenders={stats.surrenders} "
        f"migrations={stats.migrations}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corefill",
        description="Run and analyze core-backfilling scheduler experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one workload in sim or live mode")
    run.add_argument("mode", choices=("sim", "live"))
    run.add_argument("config", help="workload config file (key = value lines)")
    run.add_argument("--umt", choices=("on", "off"), default="on",
                     help="enable block/unblock-driven scheduling (default on)")
    run.add_argument("--seed", type=int, default=None,
                     help=f"run seed (default 1, or ${SEED_ENV})")
    run.add_argument("--cores", type=int, default=4)
    run.add_argument("--timeslice-us", type=int, default=1000)
    run.add_argument("--trace", metavar="PATH", default=None,
                     help="write a JSON-lines event trace")
    run.add_argument("--out", metavar="PATH", default=None,
                     help="append the metrics row to this CSV")
    run.set_defaults(func=cmd_run)

    compare = sub.add_parser("compare", help="A/B report from two metrics CSVs")
    compare.add_argument("baseline_csv")
    compare.add_argument("umt_csv")
    compare.add_argument("--out", metavar="PATH", default=None,
                         help="write a long-format CSV for plotting")
    compare.set_defaults(func=cmd_compare)

    stats = sub.add_parser("trace-stats", help="summarize a JSON-lines trace")
    stats.add_argument("trace")
    stats.set_defaults(func=cmd_trace_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigParseError, InvalidSpecError, InvalidConfigError, ConfigError,
            TraceError, MismatchedRunsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StalledError as exc:
        print(f"stalled: {exc}", file=sys.stderr)
        return EXIT_STALLED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
