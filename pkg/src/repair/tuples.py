"""
Tuple repair: greedy influence-guided deletion

influence(t) = ATE(D) - ATE(D \\ {t}), so deleting t moves the estimate by
-influence(t). With d = sign(target - ATE), a deletion helps when its
gain = -influence(t) * d is positive.

The main search clusters the tuples, scores a few sampled members plus the
representatives of every cluster, deletes the best candidate of the most
promising cluster, and rescores every `refresh_period` deletions.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.neighbors import NearestNeighbors

from src.data.dataset import Dataset
from src.estimators.engine import AteEngine
from src.repair.clusters import ClusterIndex, build_cluster_index, tuple_features
from src.state.schemas import CausalQuery, RepairResult, StopReason, TraceEntry
from src.utils.config import TupleRepairConfig
from src.utils.errors import (
    DegenerateGroups,
    EmptyGroup,
    InfluenceUnavailable,
    RankLost,
    Separation,
    SingularFisher,
)

logger = logging.getLogger(__name__)

# estimator failures that make a single candidate unusable, not the whole search
CANDIDATE_ERRORS = (DegenerateGroups, RankLost, EmptyGroup, Separation, SingularFisher)


@dataclass(frozen=True)
class InfluenceScore:
    tuple_id: int
    score: float
    computed_at: int


def influence(engine: AteEngine, tuple_id: int, base_ate: Optional[float] = None) -> float:
    """
    ATE(D) - ATE(D \\ {t}) via a pure probe

    Raises:
        InfluenceUnavailable: the estimator cannot be evaluated without t
    """
    base = engine.ate if base_ate is None else base_ate
    try:
        return base - engine.probe([tuple_id])
    except CANDIDATE_ERRORS as e:
        raise InfluenceUnavailable(
            f"Influence of tuple {tuple_id} unavailable: {e.message}",
            {"id": int(tuple_id), "cause": e.code},
        ) from e


def _finish(
    engine: AteEngine,
    query: CausalQuery,
    tolerance: float,
    ate_before: float,
    n: int,
    removed: list[int],
    trace: list[TraceEntry],
    reason: StopReason,
    started: float,
) -> RepairResult:
    """Full-refit validation and the result record"""
    ate_after = _refit_ate(engine) if removed else ate_before
    hit = query.contains(ate_after, tolerance)
    if reason != "already_in_range":
        trace.append(TraceEntry(iteration=len(removed), ate=ate_after, action="refit", removed=len(removed)))
        if hit:
            reason = "hit"
        elif reason == "hit":
            reason = "no_progress"

    logger.info(
        f"Tuple repair finished: {reason}, removed {len(removed)} tuples, "
        f"ATE {ate_before:.6g} -> {ate_after:.6g}"
    )
    return RepairResult(
        mode="tuple",
        removed_ids=[int(i) for i in removed],
        removed_count=len(removed),
        removed_fraction=len(removed) / n if n else 0.0,
        ate_before=ate_before,
        ate_after=ate_after,
        hit_range=hit,
        trace=trace,
        wall_time=time.perf_counter() - started,
        stop_reason=reason,
        query=query,
    )


def _refit_ate(engine: AteEngine) -> float:
    """Full-refit ATE on the alive rows; the incremental estimate stands when the refit fails"""
    try:
        return engine.refit_ate()
    except CANDIDATE_ERRORS as e:
        logger.warning(f"Full refit unavailable ({e.code}); keeping the incremental ATE {engine.ate:.6g}")
        return engine.ate


def _validated(engine: AteEngine, query: CausalQuery, tolerance: float) -> bool:
    if engine.update == "refit":
        return True
    return query.contains(_refit_ate(engine), tolerance)


class _GreedySearch:
    """One run of the cluster-sampled greedy loop over a live engine"""

    def __init__(self, engine: AteEngine, query: CausalQuery, config: TupleRepairConfig, started: float):
        self.engine = engine
        self.query = query
        self.config = config
        self.started = started
        self.tolerance = config.hit_tolerance
        self.n = engine.dataset.alive_count
        self.ate_before = engine.ate
        self.budget = config.budget(self.n)
        self.rng = np.random.default_rng(config.seed)
        self.scores: dict[int, InfluenceScore] = {}
        self.unavailable: set[int] = set()
        self.removed: list[int] = []
        self.trace = [TraceEntry(iteration=0, ate=self.ate_before, action="start")]
        self.index: Optional[ClusterIndex] = None

    def _score(self, tuple_id: int, ate: float) -> None:
        try:
            score = influence(self.engine, tuple_id, ate)
        except InfluenceUnavailable:
            self.unavailable.add(tuple_id)
            self.scores.pop(tuple_id, None)
            return
        self.scores[tuple_id] = InfluenceScore(tuple_id, score, len(self.removed))

    def _rescore(self, ate: float) -> None:
        assert self.index is not None
        scored = 0
        for cluster in self.index.live_clusters():
            members = np.array(
                [m for m in self.index.members(cluster) if int(m) not in self.unavailable], dtype=np.int64
            )
            if members.size == 0:
                continue
            m_k = min(self.config.m_k_cap, members.size)
            sampled = set(self.rng.choice(members, size=m_k, replace=False).tolist())
            sampled.update(r for r in self.index.representatives.get(cluster, []) if r not in self.unavailable)
            for tuple_id in sorted(sampled):
                self._score(int(tuple_id), ate)
                scored += 1
        logger.debug(f"Rescored {scored} tuples over {self.index.k} clusters at ATE {ate:.6g}")

    def _choose(self, ate: float, d: int) -> Optional[int]:
        assert self.index is not None
        query = self.query
        entries = sorted(
            (tid, s.score) for tid, s in self.scores.items() if self.engine.dataset.is_alive(tid)
        )
        if not entries:
            return None

        landing = [
            (abs(ate - score - query.target), tid)
            for tid, score in entries
            if query.contains(ate - score, self.tolerance)
        ]
        if landing:
            return min(landing)[1]

        by_cluster: dict[int, list[tuple[int, float]]] = {}
        for tid, score in entries:
            by_cluster.setdefault(self.index.cluster_of(tid), []).append((tid, -score * d))

        best_cluster, best_mean = None, -np.inf
        for cluster in sorted(by_cluster):
            gains = [g for _, g in by_cluster[cluster]]
            if max(gains) <= 0:
                continue
            mean = float(np.mean(gains))
            if mean > best_mean:
                best_cluster, best_mean = cluster, mean
        if best_cluster is None:
            return None

        # overshoot: the predicted ATE passes the far edge of the interval
        positive = [(tid, g) for tid, g in by_cluster[best_cluster] if g > 0]
        far_edge = abs(query.target - ate) + query.epsilon
        safe = [(tid, g) for tid, g in positive if g <= far_edge]
        if safe:
            return max(safe, key=lambda item: (item[1], -item[0]))[0]
        return min(positive, key=lambda item: (item[1] - far_edge, item[0]))[0]

    def run(self) -> RepairResult:
        query, config, engine = self.query, self.config, self.engine
        if query.contains(self.ate_before, self.tolerance):
            return self._finish("already_in_range")

        logger.info(
            f"Tuple repair: ATE {self.ate_before:.6g}, target [{query.lower:.6g}, {query.upper:.6g}], "
            f"budget {self.budget}"
        )
        self.index = build_cluster_index(engine.dataset, query, config.k, config.s, config.seed)

        ate = self.ate_before
        reason: Optional[StopReason] = None
        rescore, fresh, fruitless = True, False, 0
        while reason is None:
            if query.contains(ate, self.tolerance):
                if _validated(engine, query, self.tolerance):
                    reason = "hit"
                    break
                ate = engine.refit()
                rescore = True
                continue
            if len(self.removed) >= self.budget:
                reason = "budget_exhausted"
                break
            if time.perf_counter() - self.started > config.time_limit:
                reason = "time_limit"
                break

            if rescore:
                self._rescore(ate)
                rescore, fresh = False, True

            d = query.direction(ate)
            candidate = self._choose(ate, d)
            if candidate is None:
                if fresh:
                    fruitless += 1
                    if fruitless >= config.no_progress_rounds:
                        reason = "no_progress"
                        break
                rescore = True
                continue

            # confirm against the current state before deleting
            self._score(candidate, ate)
            confirmed = self.scores.get(candidate)
            if confirmed is None or -confirmed.score * d <= 0:
                self.scores.pop(candidate, None)
                continue

            try:
                new_ate = engine.commit([candidate])
            except CANDIDATE_ERRORS as e:
                logger.debug(f"Cannot delete tuple {candidate}: {e.message}")
                self.unavailable.add(candidate)
                self.scores.pop(candidate, None)
                continue

            self.removed.append(candidate)
            self.index.discard(candidate)
            self.scores.pop(candidate, None)
            self.trace.append(
                TraceEntry(iteration=len(self.removed), ate=new_ate, action=f"delete {candidate}", removed=1)
            )
            logger.debug(f"Deleted tuple {candidate}: ATE {ate:.6g} -> {new_ate:.6g}")
            ate = new_ate
            fresh, fruitless = False, 0
            if len(self.removed) % config.refresh_period == 0:
                rescore = True

        return self._finish(reason)

    def _finish(self, reason: StopReason) -> RepairResult:
        return _finish(
            self.engine, self.query, self.tolerance, self.ate_before, self.n,
            self.removed, self.trace, reason, self.started,
        )


def repair_tuples(
    dataset: Dataset,
    query: CausalQuery,
    config: Optional[TupleRepairConfig] = None,
) -> RepairResult:
    """
    Greedy cluster-sampled tuple deletion until the ATE enters the target
    interval or a stop condition fires. Deletions are applied to `dataset`.

    Above `config.sample_threshold` alive tuples the search runs on a
    uniform sample and the result is expanded with nearest neighbours in
    the full data.
    """
    config = config or TupleRepairConfig()
    started = time.perf_counter()
    if dataset.alive_count > config.sample_threshold:
        return _repair_sampled(dataset, query, config, started)
    engine = AteEngine(dataset, query, config.estimator)
    return _GreedySearch(engine, query, config, started).run()


def repair_tuples_single_update(
    dataset: Dataset,
    query: CausalQuery,
    config: Optional[TupleRepairConfig] = None,
) -> RepairResult:
    """
    Baseline: score every alive tuple once, then delete in descending gain
    order until the target is hit, the ATE passes the target, or the
    candidates run out
    """
    config = config or TupleRepairConfig()
    started = time.perf_counter()
    engine = AteEngine(dataset, query, config.estimator)
    tolerance = config.hit_tolerance
    ate_before = engine.ate
    n = dataset.alive_count
    trace = [TraceEntry(iteration=0, ate=ate_before, action="start")]
    removed: list[int] = []
    if query.contains(ate_before, tolerance):
        return _finish(engine, query, tolerance, ate_before, n, removed, trace, "already_in_range", started)

    d = query.direction(ate_before)
    gains = []
    for tuple_id in dataset.alive_ids():
        try:
            gains.append((-influence(engine, int(tuple_id), ate_before) * d, int(tuple_id)))
        except InfluenceUnavailable:
            continue
    order = [tid for gain, tid in sorted(gains, key=lambda item: (-item[0], item[1])) if gain > 0]
    logger.info(f"Single-update repair: {len(order)} helpful tuples out of {n}")

    budget = config.budget(n)
    ate = ate_before
    reason: StopReason = "no_progress"
    for tuple_id in order:
        if len(removed) >= budget:
            reason = "budget_exhausted"
            break
        if time.perf_counter() - started > config.time_limit:
            reason = "time_limit"
            break
        try:
            ate = engine.commit([tuple_id])
        except CANDIDATE_ERRORS:
            continue
        removed.append(tuple_id)
        trace.append(TraceEntry(iteration=len(removed), ate=ate, action=f"delete {tuple_id}", removed=1))
        if query.contains(ate, tolerance) and _validated(engine, query, tolerance):
            reason = "hit"
            break
        if query.direction(ate) != d:
            break

    return _finish(engine, query, tolerance, ate_before, n, removed, trace, reason, started)


# === Sampling + kNN amplification ===

def knn_neighbors(dataset: Dataset, query: CausalQuery, ids: np.ndarray, k_nn: int) -> list[np.ndarray]:
    """For each id, itself plus its k_nn nearest alive neighbours: at most k_nn + 1 ids"""
    ids = np.asarray(ids, dtype=np.int64)
    if k_nn <= 0 or ids.size == 0:
        return [np.array([tid], dtype=np.int64) for tid in ids]
    alive = dataset.alive_ids()
    features = tuple_features(dataset, query)
    finder = NearestNeighbors(n_neighbors=min(k_nn + 1, alive.size)).fit(features[alive])
    _, positions = finder.kneighbors(features[ids])
    groups = []
    for tid, row in zip(ids, positions):
        neighbours = alive[row]
        if tid not in neighbours:
            # exact duplicates can crowd the seed out; it replaces the farthest neighbour
            neighbours = neighbours[:-1]
        groups.append(np.union1d(neighbours, [tid]))
    return groups


def amplify_with_knn(dataset: Dataset, query: CausalQuery, ids: np.ndarray, k_nn: int = 100) -> np.ndarray:
    """
    Expand a repair found on a sample: every removed tuple brings its k_nn
    nearest alive neighbours (standardized [T, Z, O], Euclidean) in the
    full dataset. Returns the sorted, de-duplicated union.
    """
    groups = knn_neighbors(dataset, query, ids, k_nn)
    if not groups:
        return np.array([], dtype=np.int64)
    return np.unique(np.concatenate(groups))


def _repair_sampled(
    dataset: Dataset,
    query: CausalQuery,
    config: TupleRepairConfig,
    started: float,
) -> RepairResult:
    sample = dataset.sample(config.sample_fraction, config.seed)
    logger.info(f"Searching a {sample.n}-row sample of {dataset.alive_count} tuples")
    inner = config.model_copy(update={"sample_threshold": sample.n + 1})
    sample_result = repair_tuples(sample, query, inner)

    engine = AteEngine(dataset, query, config.estimator)
    tolerance = config.hit_tolerance
    ate_before = engine.ate
    n = dataset.alive_count
    removed: list[int] = []
    trace = [TraceEntry(iteration=0, ate=ate_before, action="start")]
    if query.contains(ate_before, tolerance):
        return _finish(engine, query, tolerance, ate_before, n, removed, trace, "already_in_range", started)

    assert sample.parent_ids is not None
    seeds = sample.parent_ids[np.asarray(sample_result.removed_ids or [], dtype=np.int64)]
    groups = knn_neighbors(dataset, query, seeds, config.knn_k)

    ate = ate_before
    budget = config.budget(n)
    reason: StopReason = sample_result.stop_reason if not sample_result.hit_range else "no_progress"
    for group in groups:
        group = np.array([g for g in group if dataset.is_alive(int(g))], dtype=np.int64)
        if group.size == 0 or len(removed) + group.size > budget:
            continue
        try:
            predicted = engine.probe(group)
        except CANDIDATE_ERRORS:
            continue
        d = query.direction(ate)
        # skip groups that move away from the target or jump past the interval
        if (predicted - ate) * d <= 0:
            continue
        if not query.contains(predicted, tolerance) and query.direction(predicted) != d:
            continue
        ate = engine.commit(group)
        removed.extend(int(g) for g in group)
        trace.append(TraceEntry(iteration=len(trace), ate=ate, action=f"delete group of {group.size}", removed=int(group.size)))
        if query.contains(ate, tolerance) and _validated(engine, query, tolerance):
            reason = "hit"
            break

    return _finish(engine, query, tolerance, ate_before, n, removed, trace, reason, started)


__all__ = [
    "InfluenceScore",
    "influence",
    "repair_tuples",
    "repair_tuples_single_update",
    "knn_neighbors",
    "amplify_with_knn",
]
