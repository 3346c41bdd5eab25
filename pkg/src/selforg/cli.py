"""Command-line entry point.

Exit codes: 0 success, 2 configuration problem, 3 convergence failure,
4 truncation failure (basis or photon cutoff too small for the run).
"""

from __future__ import annotations

import argparse
import json
import sys

from .evolve import ConvergenceError, DegenerateNullSpaceError
from .observables import CutoffError
from .runner import ConfigError, parse_config, run_task


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="selforg",
        description=(
            "Driven atoms in a lossy cavity: stationary states, spectra, "
            "field distributions, and ordering phase diagrams from a "
            "JSON run configuration."
        ),
    )
    parser.add_argument("--config", required=True, help="JSON run config")
    parser.add_argument(
        "--task", default=None,
        help="override the task named in the config",
    )
    parser.add_argument(
        "--out", default=None,
        help="output directory (overrides config output_dir)",
    )
    parser.add_argument(
        "--reproducible", action="store_true",
        help="suppress wall-clock timings so reruns are byte-identical",
    )
    parser.add_argument(
        "--threads", type=int, default=1,
        help="worker threads for sweep rows (default 1)",
    )
    parser.add_argument(
        "--dump-operators", action="store_true",
        help="also write the assembled operators as sparse triplet CSVs",
    )
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.task is not None:
        if not isinstance(raw, dict):
            print("config error: config root must be an object", file=sys.stderr)
            return 2
        raw["task"] = args.task
    try:
        cfg = parse_config(raw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out or cfg.output_dir
    if not out_dir:
        print("config error: no output directory (use --out or output_dir)",
              file=sys.stderr)
        return 2
    if args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return 2

    try:
        summary = run_task(
            cfg, out_dir,
            reproducible=args.reproducible,
            threads=args.threads,
            dump_operators=args.dump_operators,
        )
    except (ConvergenceError, DegenerateNullSpaceError) as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return 3
    except CutoffError as exc:
        print(f"truncation failure: {exc}", file=sys.stderr)
        return 4

    status = summary["truncation"]["status"]
    for name in summary["outputs"]:
        print(f"wrote {summary['out_dir']}/{name}")
    print(f"truncation: {status}")
    if status == "FAIL":
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
