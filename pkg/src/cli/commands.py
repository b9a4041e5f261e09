"""
Subcommand implementations

Each `cmd_*` takes the parsed argparse namespace and returns the process
exit status. Library errors propagate; the entry point turns them into
exit status 1 and a diagnostics line.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import ValidationError
from rich.console import Console

from src.bench.noise import inject_noise
from src.bench.synth import SynthSpec, generate
from src.bench.sweeps import bench, load_suite, write_bench_csv
from src.cli.report import (
    bench_table,
    print_summary,
    schema_table,
    write_json,
    write_removed_csv,
    write_result_json,
    write_trace_csv,
)
from src.data.dataset import Dataset, load_csv, satisfies, write_csv
from src.estimators.engine import AteEngine
from src.repair.runner import best_of, run_repair
from src.state.schemas import CausalQuery, RepairResult
from src.utils.config import EstimatorConfig, RunConfig, load_run_config, load_toml, validate_model
from src.utils.errors import ConfigError
from src.utils.paths import resolve_output

logger = logging.getLogger(__name__)

EXIT_HIT = 0
EXIT_ERROR = 1
EXIT_MISSED = 2


def _split(value: Optional[str]) -> Optional[list[str]]:
    if value is None:
        return None
    return [item.strip() for item in value.split(",") if item.strip()]


def exit_status(result: RepairResult) -> int:
    return EXIT_HIT if result.hit_range else EXIT_MISSED


def removed_rows(dataset: Dataset, result: RepairResult) -> np.ndarray:
    """Ids a result deletes from `dataset` (its removed_ids, or psi(D) of its pattern)"""
    if result.pattern is not None:
        return satisfies(result.pattern, dataset)
    return np.asarray(result.removed_ids or [], dtype=np.int64)


def replay(
    dataset: Dataset,
    result: RepairResult,
    query: Optional[CausalQuery] = None,
    estimator: Optional[EstimatorConfig] = None,
) -> float:
    """Re-apply a result to a fresh copy of its input and refit from scratch"""
    query = query or result.query
    if query is None:
        raise ValueError("Result carries no query; pass one explicitly")
    repaired = dataset.copy()
    repaired.delete(removed_rows(repaired, result))
    return AteEngine(repaired, query, estimator).ate


# === repair ===

def repair_overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Nested override dict from repair flags (None entries are dropped on merge)"""
    return {
        "data": args.data,
        "mode": args.mode,
        "seed": args.seed,
        "time_limit": args.time_limit,
        "runs": args.runs,
        "opt_budget": args.opt_budget,
        "query": {
            "treatment": args.treatment,
            "outcome": args.outcome,
            "confounders": _split(args.confounders),
            "target": args.target,
            "epsilon": args.epsilon,
        },
        "estimator": {"kind": args.estimator, "update": args.update},
        "tuple_search": {"max_removals": args.max_removals, "refresh_period": args.refresh_period},
        "pattern_search": {"k_walks": args.k_walks, "tau": args.tau},
        "output": {
            "result_json": args.output,
            "removed_csv": args.removed_csv,
            "trace_csv": args.trace_csv,
            "state_json": args.dump_state,
            "include_trace": False if args.no_trace else None,
        },
    }


def run(config: RunConfig, console: Optional[Console] = None) -> RepairResult:
    """
    Execute one configured repair and write its artifacts

    With runs > 1 the search is repeated with seeds seed, seed+1, ... on
    fresh copies of the input and the best result is kept.
    """
    dataset = load_csv(config.data)
    query = config.causal_query()
    logger.info(f"🚀 {config.mode} repair on {config.data.name}: {dataset.alive_count} tuples, target {query.target} ± {query.epsilon}")

    attempts: list[tuple[RepairResult, Dataset]] = []
    for attempt in range(config.runs):
        seed = config.seed + attempt
        working = dataset.copy()
        result = run_repair(
            working,
            query,
            config.mode,
            tuple_config=config.tuple_search.model_copy(update={"seed": seed}),
            pattern_config=config.pattern_search.model_copy(update={"seed": seed}),
            opt_budget=config.opt_budget,
            opt_max_n=config.opt_max_n,
            opt_max_patterns=config.opt_max_patterns,
        )
        if config.runs > 1:
            logger.info(f"   run {attempt + 1}/{config.runs} (seed {seed}): {result.removed_count} removed, hit={result.hit_range}")
        attempts.append((result, working))

    result = best_of([r for r, _ in attempts])
    repaired = next(w for r, w in attempts if r is result)

    output = config.output
    if (path := resolve_output(output.result_json)) is not None:
        write_result_json(result, path, include_trace=output.include_trace)
        logger.info(f"   result -> {path}")
    if (path := resolve_output(output.removed_csv)) is not None:
        write_removed_csv(dataset, removed_rows(dataset, result), path)
    if (path := resolve_output(output.trace_csv)) is not None:
        write_trace_csv(result, path)
    if (path := resolve_output(output.state_json)) is not None:
        write_json(AteEngine(repaired, query, config.estimator).state_dict(), path)

    print_summary(result, console)
    if result.hit_range:
        logger.info(f"✅ Target reached after {result.removed_count} removals ({result.stop_reason})")
    else:
        logger.warning(f"⚠️  Target missed: {result.stop_reason}")
    return result


def cmd_repair(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, repair_overrides(args))
    return exit_status(run(config))


# === bench ===

def cmd_bench(args: argparse.Namespace) -> int:
    suite = load_suite(args.suite, {"workers": args.workers, "output": args.output})
    frame = bench(suite)
    path = write_bench_csv(frame, resolve_output(suite.output) or suite.output)
    Console().print(bench_table(frame))
    failed = int((frame["error"].fillna("") != "").sum()) if not frame.empty else 0
    logger.info(f"✅ Bench '{suite.name}': {len(frame)} rows ({failed} failed) -> {path}")
    return EXIT_HIT


# === synth / inject ===

def load_synth_spec(path: Optional[str | Path], overrides: dict[str, Any]) -> SynthSpec:
    """SynthSpec from a TOML file (top level or [synth] table) plus flags"""
    raw: dict[str, Any] = {}
    if path is not None:
        raw = load_toml(path)
        raw = dict(raw.get("synth", raw))
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return validate_model(SynthSpec, raw, "synthetic spec")


def cmd_synth(args: argparse.Namespace) -> int:
    spec = load_synth_spec(
        args.config,
        {"n": args.n, "n_confounders": args.confounders, "planted_fraction": args.planted_fraction},
    )
    dataset, truth = generate(spec, args.seed)
    out = resolve_output(args.output) or Path(args.output)
    write_csv(dataset, out)
    truth_path = resolve_output(args.truth) if args.truth else out.with_suffix(".truth.json")
    write_json(truth.model_dump(mode="json"), truth_path)
    logger.info(
        f"✅ Wrote {dataset.n} rows to {out} (planted {truth.planted_count}, "
        f"clean ATE {truth.clean_ate}, observed ATE {truth.observed_ate})"
    )
    return EXIT_HIT


def _query_from_flags(args: argparse.Namespace, target: float = 0.0) -> CausalQuery:
    return CausalQuery(
        treatment=args.treatment,
        outcome=args.outcome,
        confounders=tuple(_split(args.confounders) or ()),
        target=target,
        epsilon=0.0,
    )


def cmd_inject(args: argparse.Namespace) -> int:
    dataset = load_csv(args.data)
    query = _query_from_flags(args)
    query.validate_against(dataset.schema)
    noisy, log = inject_noise(dataset, query, args.kind, args.level, args.seed)
    out = resolve_output(args.output) or Path(args.output)
    write_csv(noisy, out)
    log_path = resolve_output(args.log) if args.log else out.with_suffix(".log.json")
    write_json(log.model_dump(mode="json"), log_path)
    logger.info(f"✅ Injected {args.kind} at {args.level:.0%}: {len(log.affected_ids)} rows affected -> {out}")
    return EXIT_HIT


# === inspect ===

def load_result(path: str | Path) -> RepairResult:
    """A result file written by `repair`; unreadable or malformed files are ConfigErrors"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"Cannot read result file {path}: {e}", {"path": str(path)}) from e
    try:
        return RepairResult.model_validate_json(text)
    except ValidationError as e:
        errors = [f"{'.'.join(map(str, err['loc'])) or '<root>'}: {err['msg']}" for err in e.errors()]
        raise ConfigError(f"Invalid result file {path}", {"path": str(path), "errors": errors[:10]}) from e


def cmd_inspect(args: argparse.Namespace) -> int:
    """Schema summary, the current ATE and optionally a result re-validation"""
    console = Console()
    dataset = load_csv(args.data)
    console.print(schema_table(dataset))

    estimator = EstimatorConfig(kind=args.estimator or "ols")
    if args.treatment and args.outcome:
        query = _query_from_flags(args)
        console.print(f"ATE ({estimator.kind}): {AteEngine(dataset, query, estimator).ate:.6g}")

    if args.result:
        result = load_result(args.result)
        replayed = replay(dataset, result, estimator=estimator)
        drift = abs(replayed - result.ate_after)
        console.print(f"Replayed ATE: {replayed:.6g} (reported {result.ate_after:.6g}, drift {drift:.2e})")
        if drift > args.replay_tolerance:
            logger.warning(f"⚠️  Replayed ATE differs from the reported one by {drift:.2e}")
            return EXIT_MISSED
        logger.info("✅ Result re-validated")
    return EXIT_HIT


__all__ = [
    "EXIT_HIT",
    "EXIT_ERROR",
    "EXIT_MISSED",
    "exit_status",
    "removed_rows",
    "replay",
    "repair_overrides",
    "run",
    "cmd_repair",
    "cmd_bench",
    "load_synth_spec",
    "cmd_synth",
    "cmd_inject",
    "load_result",
    "cmd_inspect",
]
