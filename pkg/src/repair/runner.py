"""
Mode dispatch shared by the CLI and the bench harness
"""

from __future__ import annotations

import logging
from typing import Optional

from src.bench.oracle import opt_pattern, opt_tuple
from src.data.dataset import Dataset
from src.repair.patterns import repair_pattern
from src.repair.tuples import repair_tuples, repair_tuples_single_update
from src.state.schemas import CausalQuery, RepairResult
from src.utils.config import PatternRepairConfig, RepairMode, TupleRepairConfig

logger = logging.getLogger(__name__)


def run_repair(
    dataset: Dataset,
    query: CausalQuery,
    mode: RepairMode,
    tuple_config: Optional[TupleRepairConfig] = None,
    pattern_config: Optional[PatternRepairConfig] = None,
    opt_budget: Optional[int] = None,
    opt_max_n: int = 30,
    opt_max_patterns: int = 1_000_000,
) -> RepairResult:
    """Run one repair mode on `dataset` (its mask receives the deletions)"""
    tuple_config = tuple_config or TupleRepairConfig()
    pattern_config = pattern_config or PatternRepairConfig()
    logger.debug(f"Running {mode} repair on {dataset}")

    if mode == "tuple":
        return repair_tuples(dataset, query, tuple_config)
    if mode == "tuple-single-update":
        return repair_tuples_single_update(dataset, query, tuple_config)
    if mode == "pattern":
        return repair_pattern(dataset, query, pattern_config)
    if mode == "opt-tuple":
        return opt_tuple(
            dataset, query, budget=opt_budget, max_n=opt_max_n,
            estimator=tuple_config.estimator, tolerance=tuple_config.hit_tolerance,
        )
    if mode == "opt-pattern":
        return opt_pattern(
            dataset, query, max_patterns=opt_max_patterns,
            exclude_treatment=pattern_config.exclude_treatment,
            estimator=pattern_config.estimator, tolerance=pattern_config.hit_tolerance,
        )
    raise ValueError(f"Unknown repair mode: {mode}")


def best_of(results: list[RepairResult]) -> RepairResult:
    """Hit first, then fewer removals, then closer to the target"""
    def rank(result: RepairResult) -> tuple[bool, int, float]:
        target = result.query.target if result.query is not None else result.ate_after
        return (not result.hit_range, result.removed_count, abs(result.ate_after - target))

    return min(results, key=rank)


__all__ = ["run_repair", "best_of"]
