"""Command line interface: `pool run`, `pool summarize`, `pool saa`."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from .harness import (
    ExperimentConfig,
    load_config,
    read_rows_csv,
    run_experiment,
    summarize,
    write_summary_csv,
)
from .inventory import saa_benchmark
from .reporting import render_summary_figures


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pool",
        description="Privacy-preserving offline RL sweeps on inventory benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a configured sweep and write the results CSV")
    run_p.add_argument("--config", help="flat key=value config file")
    run_p.add_argument("--rho", help="comma-separated privacy budgets (overrides the grid)")
    run_p.add_argument("--method", help="comma-separated methods: pool,nonprivate,ip,op")
    run_p.add_argument("--seeds", type=int, help="number of seeds per cell")
    run_p.add_argument("--out", help="results CSV path")

    sum_p = sub.add_parser("summarize", help="aggregate a results CSV and render figures")
    sum_p.add_argument("csv", help="results CSV produced by `pool run`")
    sum_p.add_argument("--out-dir", help="directory for summary CSV and figures")

    saa_p = sub.add_parser("saa", help="compute the SAA base-stock benchmark for a config")
    saa_p.add_argument("--config", help="flat key=value config file")
    saa_p.add_argument("--out", help="optional CSV for the per-stage levels")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if getattr(args, "rho", None):
        values = tuple(float(v) for v in args.rho.split(","))
        overrides["rho_grid"] = values
        if len(values) == 1:
            overrides["rho"] = values[0]
    if getattr(args, "method", None):
        overrides["methods"] = tuple(m.strip() for m in args.method.split(","))
    if getattr(args, "seeds", None):
        overrides["seeds"] = args.seeds
    if getattr(args, "out", None):
        overrides["out"] = args.out
    return replace(config, **overrides) if overrides else config


def _cmd_run(args) -> int:
    config = _config_from_args(args)
    rows = run_experiment(config)
    failed = sum(r.status != "ok" for r in rows)
    print(f"wrote {len(rows)} rows to {config.out} ({failed} failed)")
    return 0 if failed == 0 else 1


def _cmd_summarize(args) -> int:
    rows = read_rows_csv(args.csv)
    summary = summarize(rows)
    out_dir = args.out_dir or (os.path.dirname(os.path.abspath(args.csv)))
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.csv))[0]
    summary_path = os.path.join(out_dir, f"{stem}_summary.csv")
    write_summary_csv(summary, summary_path)
    figures = render_summary_figures(summary, out_dir, stem=stem)
    print(f"wrote {summary_path}")
    for fig in figures:
        print(f"wrote {fig}")
    return 0


def _cmd_saa(args) -> int:
    config = load_config(args.config) if args.config else ExperimentConfig()
    runner_products = config.dims // 2
    from .harness import _CellRunner  # shares the env construction path

    runner = _CellRunner(config)
    params, _ = runner.env(runner_products, config.horizon)
    result = saa_benchmark(params, n_samples=config.benchmark_samples,
                           seed=config.benchmark_seed,
                           eval_episodes=config.eval_episodes)
    print(f"SAA benchmark cost: {result.cost:.4f} (sd {result.cost_std:.4f})")
    for h in range(config.horizon):
        levels = ", ".join(f"{v:.2f}" for v in result.levels[h])
        print(f"  stage {h + 1}: base-stock level(s) {levels}")
    if args.out:
        import csv as _csv

        with open(args.out, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["stage"] + [f"level_{i}" for i in range(runner_products)])
            for h in range(config.horizon):
                writer.writerow([h + 1] + [repr(float(v)) for v in result.levels[h]])
        print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("POOL_LOG", "WARNING"))
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "summarize":
        return _cmd_summarize(args)
    if args.command == "saa":
        return _cmd_saa(args)
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
