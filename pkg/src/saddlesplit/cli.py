"""Command line entry point: ``saddlesplit run|relax|eig|table``.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure (a run
diverged or the eigensolver failed).  Divergence inside ``table`` is data
and does not change the exit code.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load_config
from .experiments import TABLE_IDS, eigen_report, reproduce_table, run_experiment, summarize
from .minmode import EigenSolverError
from .schemes import SingularOperatorError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saddlesplit", description="Index-1 saddle search with convex-splitting inner solvers.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run the experiment described by a config file"),
        ("relax", "relax the configured initial field to a stable state"),
        ("eig", "report the smallest eigenvalues at the configured initial field"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", type=Path)
        p.add_argument("--out", type=Path, help="output directory (default: config 'out' or the run name)")
        p.add_argument("--seed", type=_seed, help="perturbation seed (overrides the config)")
        p.add_argument("--trace", action="store_true", help="print one line per cycle to stderr")
    p = sub.add_parser("table", help="reproduce one of the reference tables")
    p.add_argument("table", choices=TABLE_IDS)
    p.add_argument("--out", type=Path, default=Path("tables"))
    p.add_argument("--full", action="store_true", help="run every cell to completion instead of stopping at the band edge")
    p.add_argument("--trace", action="store_true", help="print one line per table row to stderr")
    p.add_argument("--seed", type=_seed, help="accepted for symmetry; tables use fixed initial fields")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    echo = sys.stderr if args.trace else None
    if args.command == "table":
        cells = reproduce_table(args.table, args.out, budget="full" if args.full else "band", progress=echo)
        counts = summarize(cells)
        print(f"{args.table}: {counts['pass']} pass, {counts['soft']} soft, {counts['fail']} fail -> {args.out / (args.table + '.csv')}")
        return EXIT_OK

    try:
        spec = load_config(args.config)
        if args.seed is not None:
            spec = spec.with_seed(args.seed)
        if args.command == "relax":
            spec = replace(spec, mode="relax")
        spec.validate()
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out or Path(spec.out or spec.name)
    try:
        if args.command == "eig":
            lam = eigen_report(spec, out)
            print("eigenvalues: " + ", ".join(f"{x:.6g}" for x in lam))
            return EXIT_OK
        res = run_experiment(spec, out, echo=echo)
    except (EigenSolverError, SingularOperatorError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if res.diverged:
        print(f"{spec.name}: diverged after {res.total_iterations} iterations", file=sys.stderr)
        return EXIT_RUNTIME
    status = "converged" if res.converged else "stopped at the iteration cap"
    print(f"{spec.name}: {status}, F = {res.energy:.10g}, |grad F| = {res.grad_norm:.3e}, cycles = {res.cycles} -> {out}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
