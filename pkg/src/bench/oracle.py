"""
Exhaustive-search oracles for small instances

opt_tuple enumerates deletion sets by increasing cardinality, opt_pattern
enumerates every pattern over the eligible attributes by increasing
support. Both evaluate candidates with a full refit, so their answers are
provably minimal and serve as ground truth for the heuristics.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from typing import Optional

import numpy as np

from src.data.dataset import Dataset, satisfies
from src.estimators.engine import AteEngine
from src.repair.patterns import eligible_attributes
from src.repair.tuples import CANDIDATE_ERRORS
from src.state.schemas import CausalQuery, Pattern, RepairResult, StopReason, TraceEntry
from src.utils.config import DEFAULT_HIT_TOLERANCE, EstimatorConfig
from src.utils.errors import InstanceTooLarge, NoEligibleAttributes, PatternSpaceTooLarge

logger = logging.getLogger(__name__)


def _refit_config(estimator: Optional[EstimatorConfig]) -> EstimatorConfig:
    return (estimator or EstimatorConfig()).model_copy(update={"update": "refit"})


def _result(
    mode: str,
    engine: AteEngine,
    query: CausalQuery,
    ate_before: float,
    n: int,
    started: float,
    reason: StopReason,
    tolerance: float,
    removed_ids: Optional[list[int]] = None,
    pattern: Optional[Pattern] = None,
    removed_count: int = 0,
    trace: Optional[list[TraceEntry]] = None,
) -> RepairResult:
    ate_after = engine.ate if removed_count else ate_before
    return RepairResult(
        mode="tuple" if mode == "tuple" else "pattern",
        removed_ids=removed_ids,
        pattern=pattern,
        removed_count=removed_count,
        removed_fraction=removed_count / n if n else 0.0,
        ate_before=ate_before,
        ate_after=ate_after,
        hit_range=reason in ("hit", "already_in_range") and query.contains(ate_after, tolerance),
        trace=trace or [],
        wall_time=time.perf_counter() - started,
        stop_reason=reason,
        query=query,
    )


def opt_tuple(
    dataset: Dataset,
    query: CausalQuery,
    budget: Optional[int] = None,
    max_n: int = 30,
    estimator: Optional[EstimatorConfig] = None,
    tolerance: float = DEFAULT_HIT_TOLERANCE,
) -> RepairResult:
    """
    Smallest deletion set that moves the ATE into the interval

    Subsets are tried by increasing size 0, 1, ..., budget (default: all
    but one row); within a size, in lexicographic id order. The first hit
    is applied to `dataset`. No hit within budget gives an "infeasible"
    result with the mask unchanged.

    Raises:
        InstanceTooLarge: more than max_n alive tuples
    """
    started = time.perf_counter()
    n = dataset.alive_count
    if n > max_n:
        raise InstanceTooLarge(
            f"opt_tuple enumerates subsets of at most {max_n} tuples, got {n}",
            {"n": n, "max_n": max_n},
        )
    engine = AteEngine(dataset, query, _refit_config(estimator))
    ate_before = engine.ate
    if query.contains(ate_before, tolerance):
        return _result("tuple", engine, query, ate_before, n, started, "already_in_range", tolerance, removed_ids=[])

    budget = n - 1 if budget is None else min(budget, n)
    alive = [int(i) for i in dataset.alive_ids()]
    trace = [TraceEntry(iteration=0, ate=ate_before, action="start")]
    for size in range(1, budget + 1):
        evaluated = 0
        for subset in itertools.combinations(alive, size):
            try:
                ate = engine.probe(subset, refit=True)
            except CANDIDATE_ERRORS:
                continue
            evaluated += 1
            if query.contains(ate, tolerance):
                engine.commit(subset, refit=True)
                trace.append(TraceEntry(iteration=size, ate=engine.ate, action=f"delete {list(subset)}", removed=size))
                logger.info(f"opt_tuple: optimum {size} found with witness {list(subset)}")
                return _result(
                    "tuple", engine, query, ate_before, n, started, "hit", tolerance,
                    removed_ids=list(subset), removed_count=size, trace=trace,
                )
        logger.debug(f"opt_tuple: no hit among {evaluated} subsets of size {size}")

    return _result("tuple", engine, query, ate_before, n, started, "infeasible", tolerance, removed_ids=[], trace=trace)


def pattern_space_size(dataset: Dataset, attributes: list[str]) -> int:
    """Number of patterns: product of (domain size + 1) over attributes"""
    alive = dataset.alive
    return math.prod(len(np.unique(dataset.column(a)[alive])) + 1 for a in attributes)


def opt_pattern(
    dataset: Dataset,
    query: CausalQuery,
    max_patterns: int = 1_000_000,
    exclude_treatment: bool = True,
    estimator: Optional[EstimatorConfig] = None,
    tolerance: float = DEFAULT_HIT_TOLERANCE,
) -> RepairResult:
    """
    Minimum-support pattern whose removal lands the ATE in the interval

    Every pattern over the eligible attributes (each attribute either
    fixed to one of its alive values or left free) is evaluated by a full
    refit, in order of (support, lexicographic pattern). Patterns selecting
    nothing, and those whose removal empties a treatment group, are skipped.

    Raises:
        PatternSpaceTooLarge: more than max_patterns patterns
        NoEligibleAttributes: no categorical/binary attribute is available
    """
    started = time.perf_counter()
    n = dataset.alive_count
    engine = AteEngine(dataset, query, _refit_config(estimator))
    ate_before = engine.ate
    if query.contains(ate_before, tolerance):
        return _result("pattern", engine, query, ate_before, n, started, "already_in_range", tolerance)

    attributes = eligible_attributes(dataset, query, exclude_treatment)
    if not attributes:
        raise NoEligibleAttributes(
            "No categorical or binary attribute is available for patterns",
            {"outcome": query.outcome, "treatment": query.treatment},
        )

    space = pattern_space_size(dataset, attributes)
    if space > max_patterns:
        raise PatternSpaceTooLarge(
            f"{space} patterns exceed the limit of {max_patterns}",
            {"patterns": space, "limit": max_patterns},
        )

    alive = dataset.alive
    domains = [[None, *np.unique(dataset.column(a)[alive]).tolist()] for a in attributes]
    candidates = []
    for values in itertools.product(*domains):
        pattern = Pattern.of({a: v for a, v in zip(attributes, values) if v is not None})
        ids = satisfies(pattern, dataset)
        if ids.size:
            candidates.append((int(ids.size), pattern.sort_key(), pattern, ids))
    candidates.sort(key=lambda item: (item[0], item[1]))
    logger.debug(f"opt_pattern: {len(candidates)} non-empty patterns out of {space}")

    for support, _, pattern, ids in candidates:
        try:
            ate = engine.probe(ids, refit=True)
        except CANDIDATE_ERRORS:
            continue
        if query.contains(ate, tolerance):
            engine.commit(ids, refit=True)
            trace = [
                TraceEntry(iteration=0, ate=ate_before, action="start"),
                TraceEntry(iteration=1, ate=engine.ate, action=f"delete {pattern}", removed=support),
            ]
            logger.info(f"opt_pattern: optimum {pattern} with support {support}")
            return _result(
                "pattern", engine, query, ate_before, n, started, "hit", tolerance,
                pattern=pattern, removed_count=support, trace=trace,
            )

    return _result("pattern", engine, query, ate_before, n, started, "infeasible", tolerance)


__all__ = ["opt_tuple", "opt_pattern", "pattern_space_size"]
