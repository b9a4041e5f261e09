"""
Pattern repair: weighted random walks over the conjunctive-pattern lattice

Walks start at a most-specific group (a full assignment over the
pattern-eligible attributes) and climb the lattice by dropping one
predicate at a time, which can only grow the selected population. Each
pattern is evaluated by probing its removal from the full baseline state;
the first pattern whose removal lands the ATE in the target interval is
validated by a full refit and applied.

Predicates whose removal moved the ATE toward the target are dropped more
often in later walks.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.data.dataset import Dataset, satisfies
from src.estimators.engine import AteEngine
from src.repair.tuples import CANDIDATE_ERRORS
from src.state.schemas import CausalQuery, Pattern, PatternValue, RepairResult, StopReason, TraceEntry
from src.utils.config import PatternRepairConfig
from src.utils.errors import EmptyPattern, NoEligibleAttributes

logger = logging.getLogger(__name__)

Predicate = tuple[str, PatternValue]


def eligible_attributes(dataset: Dataset, query: CausalQuery, exclude_treatment: bool = True) -> list[str]:
    """Categorical and binary attributes other than the outcome (and treatment)"""
    excluded = {query.outcome}
    if exclude_treatment:
        excluded.add(query.treatment)
    return [
        a.name
        for a in dataset.schema.attributes
        if a.kind in ("categorical", "numeric-binary") and a.name not in excluded
    ]


def most_specific_groups(
    dataset: Dataset,
    query: CausalQuery,
    exclude_treatment: bool = True,
) -> list[tuple[Pattern, int]]:
    """
    Group the alive tuples by their full assignment over the eligible
    attributes; one (pattern, support) per non-empty group, in sorted
    group order

    Raises:
        NoEligibleAttributes: nothing categorical/binary to build patterns from
    """
    attributes = eligible_attributes(dataset, query, exclude_treatment)
    if not attributes:
        raise NoEligibleAttributes(
            "No categorical or binary attribute is available for patterns",
            {"excluded": [query.outcome] + ([query.treatment] if exclude_treatment else [])},
        )
    frame = dataset.to_frame()[attributes]
    if frame.empty:
        return []
    sizes = frame.groupby(attributes, sort=True).size()
    groups = []
    for key, support in sizes.items():
        values = key if isinstance(key, tuple) else (key,)
        groups.append((Pattern.of(dict(zip(attributes, values))), int(support)))
    return groups


@dataclass
class PredicateStats:
    success_count: int = 0
    cumulative_shift: float = 0.0


@dataclass
class PredicateWeights:
    """
    Drop probability of a predicate is proportional to
    smoothing + max(0, cumulative_shift) / scale
    """
    scale: float = 1.0
    smoothing: float = 1.0
    stats: dict[Predicate, PredicateStats] = field(default_factory=dict)

    def weight(self, predicate: Predicate) -> float:
        stats = self.stats.get(predicate)
        if stats is None:
            return self.smoothing
        return self.smoothing + max(0.0, stats.cumulative_shift) / self.scale

    def record(self, predicate: Predicate, shift: float) -> None:
        """shift: signed ATE movement toward the target caused by dropping predicate"""
        stats = self.stats.setdefault(predicate, PredicateStats())
        stats.cumulative_shift += shift
        if shift > 0:
            stats.success_count += 1

    def probabilities(self, pattern: Pattern) -> np.ndarray:
        weights = np.array([self.weight(p) for p in pattern.predicates], dtype=float)
        return weights / weights.sum()


def remove_predicate(pattern: Pattern, weights: PredicateWeights, rng: np.random.Generator) -> Pattern:
    """
    Parent pattern: drop exactly one predicate, chosen by weight

    Raises:
        EmptyPattern: the pattern has no predicate to drop
    """
    if len(pattern) == 0:
        raise EmptyPattern("Cannot drop a predicate from the empty pattern")
    choice = int(rng.choice(len(pattern), p=weights.probabilities(pattern)))
    return pattern.without(pattern.predicates[choice][0])


@dataclass(frozen=True)
class _Evaluation:
    ate: Optional[float]
    support: int


class _PatternSearch:
    """
    Walks on `search` (the dataset itself, or a sample of it); hits are
    validated and applied on `full`.
    """

    def __init__(
        self,
        full: Dataset,
        search: Dataset,
        query: CausalQuery,
        config: PatternRepairConfig,
        started: float,
    ):
        self.full = full
        self.search = search
        self.query = query
        self.config = config
        self.started = started
        self.tolerance = config.hit_tolerance
        self.full_engine = AteEngine(full, query, config.estimator)
        self.search_engine = self.full_engine if search is full else AteEngine(search, query, config.estimator)
        self.ate_before = self.full_engine.ate
        self.search_ate = self.search_engine.ate
        self.n_full = full.alive_count
        self.n_search = search.alive_count
        self.limit = config.tau * self.n_search
        self.cache: dict[Pattern, _Evaluation] = {}
        self.rejected: set[Pattern] = set()
        self.best: Optional[tuple[float, int, tuple, Pattern]] = None
        self.trace = [TraceEntry(iteration=0, ate=self.ate_before, action="start")]

        gap = abs(query.target - self.search_ate)
        self.weights = PredicateWeights(scale=query.epsilon if query.epsilon > 0 else max(gap, 1e-12))
        self.rng = np.random.default_rng(config.seed)

    def evaluate(self, pattern: Pattern, walk: int) -> _Evaluation:
        cached = self.cache.get(pattern)
        if cached is not None:
            self.trace.append(TraceEntry(iteration=walk, ate=cached.ate, action=f"cached {pattern}", removed=cached.support))
            return cached

        ids = satisfies(pattern, self.search)
        support = int(ids.size)
        ate: Optional[float] = None
        if 0 < support <= self.limit:
            refit = support > self.config.refit_fraction * self.n_search
            try:
                ate = self.search_engine.probe(ids, refit=refit)
            except CANDIDATE_ERRORS as e:
                logger.debug(f"Pattern {pattern} is not evaluable: {e.code}")
        action = "probe" if support <= self.limit else "abort"
        self.trace.append(TraceEntry(iteration=walk, ate=ate, action=f"{action} {pattern}", removed=support))

        evaluation = _Evaluation(ate=ate, support=support)
        self.cache[pattern] = evaluation
        if ate is not None:
            key = (abs(ate - self.query.target), support, pattern.sort_key(), pattern)
            if self.best is None or key[:3] < self.best[:3]:
                self.best = key
        return evaluation

    def validate(self, pattern: Pattern) -> Optional[np.ndarray]:
        """Full-data refit check; returns the ids to delete on success"""
        ids = satisfies(pattern, self.full)
        if ids.size == 0 or ids.size > self.config.tau * self.n_full:
            return None
        try:
            ate = self.full_engine.probe(ids, refit=True)
        except CANDIDATE_ERRORS:
            return None
        return ids if self.query.contains(ate, self.tolerance) else None

    def _timed_out(self) -> bool:
        return time.perf_counter() - self.started > self.config.time_limit

    def run(self) -> RepairResult:
        query, config = self.query, self.config
        if query.contains(self.ate_before, self.tolerance):
            return self._result(None, None, "already_in_range")

        leaves = most_specific_groups(self.search, query, config.exclude_treatment)
        logger.info(
            f"Pattern repair: ATE {self.ate_before:.6g}, target [{query.lower:.6g}, {query.upper:.6g}], "
            f"{len(leaves)} most-specific groups, tau={config.tau}"
        )
        if not leaves:
            return self._result(None, None, "no_solution")

        d = query.direction(self.search_ate)
        for walk in range(1, config.k_walks + 1):
            if self._timed_out():
                return self._no_solution("time_limit")
            pattern = leaves[int(self.rng.integers(len(leaves)))][0]
            previous: Optional[float] = None
            dropped: Optional[Predicate] = None
            while True:
                evaluation = self.evaluate(pattern, walk)
                if evaluation.support > self.limit:
                    break
                if dropped is not None and evaluation.ate is not None:
                    reference = self.search_ate if previous is None else previous
                    self.weights.record(dropped, d * (evaluation.ate - reference))
                if (
                    evaluation.ate is not None
                    and pattern not in self.rejected
                    and query.contains(evaluation.ate, self.tolerance)
                ):
                    ids = self.validate(pattern)
                    if ids is not None:
                        return self._apply(pattern, ids, walk)
                    logger.debug(f"Pattern {pattern} rejected by full-data validation")
                    self.rejected.add(pattern)
                if len(pattern) == 0 or self._timed_out():
                    break
                previous = evaluation.ate
                parent = remove_predicate(pattern, self.weights, self.rng)
                dropped = next(p for p in pattern.predicates if p not in parent.predicates)
                pattern = parent
            logger.debug(f"Walk {walk} finished at {pattern}")

        return self._no_solution("no_solution")

    def _apply(self, pattern: Pattern, ids: np.ndarray, walk: int) -> RepairResult:
        self.full_engine.commit(ids, refit=True)
        ate_after = self.full_engine.refit_ate()
        self.trace.append(TraceEntry(iteration=walk, ate=ate_after, action=f"delete {pattern}", removed=int(ids.size)))
        return self._result(pattern, ate_after, "hit", removed_count=int(ids.size))

    def _no_solution(self, reason: StopReason) -> RepairResult:
        if self.best is None:
            return self._result(None, None, reason)
        pattern = self.best[3]
        ids = satisfies(pattern, self.full)
        search_ate = self.cache[pattern].ate
        assert search_ate is not None
        try:
            ate_after = self.full_engine.probe(ids, refit=True) if ids.size else self.ate_before
        except CANDIDATE_ERRORS:
            ate_after = search_ate
        if self.query.contains(ate_after, self.tolerance):
            logger.warning(
                f"Closest pattern {pattern} lands in range on the full data but was not applied "
                f"({ids.size} tuples, limit {self.config.tau * self.n_full:.0f})"
            )
        return self._result(pattern, ate_after, reason, removed_count=int(ids.size), applied=False)

    def _result(
        self,
        pattern: Optional[Pattern],
        ate_after: Optional[float],
        reason: StopReason,
        removed_count: int = 0,
        applied: bool = True,
    ) -> RepairResult:
        ate_after = self.ate_before if ate_after is None else ate_after
        hit = applied and self.query.contains(ate_after, self.tolerance) and reason in ("hit", "already_in_range")
        logger.info(
            f"Pattern repair finished: {reason}, pattern {pattern if pattern is not None else '-'}, "
            f"{removed_count} tuples, ATE {self.ate_before:.6g} -> {ate_after:.6g}"
        )
        return RepairResult(
            mode="pattern",
            pattern=pattern,
            removed_count=removed_count,
            removed_fraction=removed_count / self.n_full if self.n_full else 0.0,
            ate_before=self.ate_before,
            ate_after=ate_after,
            hit_range=hit,
            trace=self.trace,
            wall_time=time.perf_counter() - self.started,
            stop_reason=reason,
            query=self.query,
            applied=applied,
        )


def repair_pattern(
    dataset: Dataset,
    query: CausalQuery,
    config: Optional[PatternRepairConfig] = None,
) -> RepairResult:
    """
    Search for a pattern whose removal moves the ATE into the target
    interval. On a hit the pattern's tuples are deleted from `dataset`;
    otherwise the mask is unchanged and the closest pattern found is
    reported with hit_range=False.

    Above `config.sample_threshold` alive tuples, walks run on a seeded
    uniform sample and candidate patterns are validated on the full data.
    """
    config = config or PatternRepairConfig()
    started = time.perf_counter()
    search = dataset
    if dataset.alive_count > config.sample_threshold:
        search = dataset.sample(config.sample_fraction, config.seed)
        logger.info(f"Walking on a {search.n}-row sample of {dataset.alive_count} tuples")
    return _PatternSearch(dataset, search, query, config, started).run()


__all__ = [
    "eligible_attributes",
    "most_specific_groups",
    "PredicateStats",
    "PredicateWeights",
    "remove_predicate",
    "repair_pattern",
]
