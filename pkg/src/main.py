"""
ATE Repair - Main Application

Entry point for the cardinality-repair engine: find a small set of tuples
(or one subpopulation pattern) whose deletion moves an average treatment
effect estimate into a target range.

Usage:
    ate-repair repair --config <run.toml> [flags]
    ate-repair bench <suite.toml>
    ate-repair synth --output <data.csv> [--config synth.toml]
    ate-repair inject <data.csv> --kind <kind> --level <level> ...
    ate-repair inspect <data.csv> [--treatment T --outcome O] [--result result.json]

Examples:
    ate-repair repair --config config/repair_fixture.toml
    ate-repair repair --data data.csv --treatment T --outcome O --confounders Z0,Z1 --target 0 --mode pattern --runs 3
    ate-repair bench config/bench_noise_sweep.toml --workers 4

Exit status: 0 target reached, 2 valid run that missed the target, 1 error.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv

from src.cli.commands import EXIT_ERROR, cmd_bench, cmd_inject, cmd_inspect, cmd_repair, cmd_synth
from src.utils.config import RepairMode
from src.utils.errors import RepairError
from src.utils.logging import setup_logging

# Load environment - Get project root directory
PROJECT_ROOT = Path(__file__).parent.parent
load_dotenv(PROJECT_ROOT / ".env")

MODES: tuple[str, ...] = RepairMode.__args__  # type: ignore[attr-defined]


def _add_query_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--treatment", help="Binary 0/1 treatment attribute")
    parser.add_argument("--outcome", help="Numeric outcome attribute")
    parser.add_argument("--confounders", help="Comma-separated confounder attributes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ate-repair",
        description="Minimal tuple or pattern deletions that move an ATE estimate into a target range",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR (env LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    # repair
    repair = sub.add_parser("repair", help="Run one repair")
    repair.add_argument("--config", help="TOML run file; flags override its values")
    repair.add_argument("--data", help="Input CSV")
    _add_query_flags(repair)
    repair.add_argument("--target", type=float, help="Desired ATE")
    repair.add_argument("--epsilon", type=float, help="Half-width of the target range")
    repair.add_argument("--mode", choices=MODES)
    repair.add_argument("--estimator", choices=["ols", "ipw"])
    repair.add_argument("--update", choices=["exact", "neumann", "refit"])
    repair.add_argument("--seed", type=int)
    repair.add_argument("--time-limit", type=float)
    repair.add_argument("--runs", type=int, help="Repeat with seeds seed..seed+runs-1 and keep the best")
    repair.add_argument("--max-removals", type=int)
    repair.add_argument("--refresh-period", type=int)
    repair.add_argument("--k-walks", type=int)
    repair.add_argument("--tau", type=float)
    repair.add_argument("--opt-budget", type=int)
    repair.add_argument("--output", help="Result JSON path")
    repair.add_argument("--removed-csv", help="Write the removed tuples here")
    repair.add_argument("--trace-csv", help="Write the search trace here")
    repair.add_argument("--no-trace", action="store_true", help="Leave the trace out of the result JSON")
    repair.add_argument("--dump-state", help="Write the fitted estimator state of the repaired data here")
    repair.set_defaults(handler=cmd_repair)

    # bench
    bench = sub.add_parser("bench", help="Run a benchmark sweep")
    bench.add_argument("suite", help="TOML suite file")
    bench.add_argument("--workers", type=int)
    bench.add_argument("--output", help="Metrics CSV path")
    bench.set_defaults(handler=cmd_bench)

    # synth
    synth = sub.add_parser("synth", help="Generate a seeded synthetic dataset")
    synth.add_argument("--config", help="TOML with generator parameters")
    synth.add_argument("--n", type=int)
    synth.add_argument("--confounders", type=int)
    synth.add_argument("--planted-fraction", type=float)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--output", required=True, help="CSV path")
    synth.add_argument("--truth", help="Ground-truth JSON path (default: next to the CSV)")
    synth.set_defaults(handler=cmd_synth)

    # inject
    inject = sub.add_parser("inject", help="Corrupt a dataset with seeded noise")
    inject.add_argument("data", help="Input CSV")
    _add_query_flags(inject)
    inject.add_argument("--kind", required=True, choices=["duplicates", "missing_zero", "outliers"])
    inject.add_argument("--level", required=True, type=float)
    inject.add_argument("--seed", type=int, default=0)
    inject.add_argument("--output", required=True, help="CSV path")
    inject.add_argument("--log", help="Injection log JSON path (default: next to the CSV)")
    inject.set_defaults(handler=cmd_inject)

    # inspect
    inspect = sub.add_parser("inspect", help="Summarize a dataset and its current ATE")
    inspect.add_argument("data", help="Input CSV")
    _add_query_flags(inspect)
    inspect.add_argument("--estimator", choices=["ols", "ipw"])
    inspect.add_argument("--result", help="Result JSON to re-validate against the data")
    inspect.add_argument("--replay-tolerance", type=float, default=1e-6)
    inspect.set_defaults(handler=cmd_inspect)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """CLI entry point; returns the exit status"""
    args = build_parser().parse_args(argv)
    logger = setup_logging(args.log_level)
    try:
        return int(args.handler(args))
    except RepairError as e:
        logger.error(f"❌ {e.code}: {e.message}")
        print(json.dumps(e.to_diagnostic(), default=str), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
