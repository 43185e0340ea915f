"""Command-line entry point: ``randrelu --config sweep.ini --out results.csv``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from randrelu.experiments import (
    ExperimentConfig,
    emit_results,
    read_results,
    run_depth_sweep,
    run_grid,
)

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 2, 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="randrelu",
        description="Grid search and depth sweeps for random ReLU feature models.",
    )
    p.add_argument("--config", required=True, type=Path, help="INI experiment config")
    p.add_argument("--out", type=Path, help="results file (defaults to [output] path)")
    p.add_argument("--format", choices=("csv", "json"), default=None)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--seed", type=int, default=None, help="run a single seed instead of the config list")
    p.add_argument("--resume", action="store_true", help="skip cells already in --out")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = ExperimentConfig.load(args.config)
    except (OSError, ValueError) as exc:
        print(f"randrelu: bad config {args.config}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    out = args.out or (Path(cfg.output) if cfg.output else None)
    if out is None:
        print("randrelu: no output path (use --out or [output] path)", file=sys.stderr)
        return EXIT_USAGE
    fmt = args.format or ("json" if out.suffix == ".json" else "csv")

    done = {}
    if args.resume and out.exists():
        done = {r.config_hash: r for r in read_results(out, fmt) if r.ok}
        logging.info("resuming: %d cells already done", len(done))

    runner = run_depth_sweep if cfg.sweep == "depth" else run_grid
    records = runner(cfg, jobs=args.jobs, done=done)
    emit_results(records, out, fmt)
    failed = sum(not r.ok for r in records)
    if failed:
        print(f"randrelu: {failed} of {len(records)} cells failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
