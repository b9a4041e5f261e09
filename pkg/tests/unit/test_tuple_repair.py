"""
Unit tests for greedy tuple repair
"""

import numpy as np
import pytest

from src.bench.synth import default_query
from src.estimators.engine import AteEngine
from src.repair.tuples import (
    amplify_with_knn,
    influence,
    knn_neighbors,
    repair_tuples,
    repair_tuples_single_update,
)
from src.state.schemas import CausalQuery
from src.utils.config import EstimatorConfig, TupleRepairConfig
from src.utils.errors import Separation


def deletions(result):
    return [entry for entry in result.trace if entry.action.startswith("delete")]


class TestInfluence:
    """Tests for influence"""

    def test_row_two(self, subset_sum, subset_sum_query):
        """Removing the O=5 treated row moves the ATE from 1.25 to 0"""
        engine = AteEngine(subset_sum, subset_sum_query)

        assert influence(engine, 2) == pytest.approx(1.25, abs=1e-12)

    @pytest.mark.parametrize("tuple_id", [4, 5, 6])
    def test_controls_have_no_influence(self, subset_sum, subset_sum_query, tuple_id):
        """Identical zero-outcome controls do not move the estimate"""
        engine = AteEngine(subset_sum, subset_sum_query)

        assert influence(engine, tuple_id) == pytest.approx(0.0, abs=1e-12)

    def test_influence_is_pure(self, subset_sum, subset_sum_query):
        """Scoring never deletes"""
        engine = AteEngine(subset_sum, subset_sum_query)
        for tuple_id in range(7):
            influence(engine, tuple_id)

        assert subset_sum.alive_count == 7


class TestRepairTuples:
    """Tests for repair_tuples"""

    def test_fixture_single_removal(self, subset_sum, subset_sum_query):
        """Target 0 +/- 0 is reached by deleting row 2 alone"""
        result = repair_tuples(subset_sum, subset_sum_query)

        assert result.hit_range
        assert result.stop_reason == "hit"
        assert result.removed_ids == [2]
        assert result.removed_count == 1
        assert result.ate_before == pytest.approx(1.25, abs=1e-12)
        assert result.ate_after == pytest.approx(0.0, abs=1e-12)
        assert not subset_sum.is_alive(2)
        assert [e.action for e in result.trace] == ["start", "delete 2", "refit"]

    def test_already_in_range(self, subset_sum):
        """A target containing the current ATE deletes nothing"""
        query = CausalQuery(treatment="T", outcome="O", target=1.2, epsilon=0.1)

        result = repair_tuples(subset_sum, query)

        assert result.hit_range
        assert result.stop_reason == "already_in_range"
        assert result.removed_count == 0
        assert subset_sum.alive_count == 7

    def test_budget_exhausted(self, subset_sum):
        """An unreachable target stops at the removal budget"""
        query = CausalQuery(treatment="T", outcome="O", target=-10.0)

        result = repair_tuples(subset_sum, query, TupleRepairConfig(max_removals=1))

        assert not result.hit_range
        assert result.stop_reason == "budget_exhausted"
        assert result.removed_count == 1

    @pytest.mark.parametrize("update", ["exact", "neumann", "refit"])
    def test_synthetic_planted_noise(self, make_synth, update):
        """Every update mode reaches the clean ATE band on planted data"""
        dataset, truth, spec = make_synth(seed=2, n=1000, n_categorical=0, pattern_width=0, planted_fraction=0.05)
        query = default_query(spec, target=truth.clean_ate, epsilon=0.1 * abs(truth.clean_ate))
        config = TupleRepairConfig(estimator=EstimatorConfig(update=update), seed=2)

        result = repair_tuples(dataset, query, config)

        assert result.hit_range
        assert query.contains(AteEngine(dataset, query).ate)
        assert result.removed_count == len(set(result.removed_ids))
        assert dataset.alive_count == 1000 - result.removed_count

    def test_trace_moves_toward_target(self, make_synth):
        """Each committed deletion moves the ATE in the direction of the target"""
        dataset, truth, spec = make_synth(seed=3, n=800, n_categorical=0, pattern_width=0, planted_fraction=0.05)
        query = default_query(spec, target=truth.clean_ate, epsilon=0.02 * abs(truth.clean_ate))

        result = repair_tuples(dataset, query, TupleRepairConfig(seed=3))

        ates = [result.ate_before] + [e.ate for e in deletions(result)]
        for previous, current in zip(ates, ates[1:]):
            assert (current - previous) * query.direction(previous) > 0

    def test_ipw_estimator(self, make_synth):
        """The search runs unchanged on the IPW estimator"""
        dataset, truth, spec = make_synth(seed=4, n=600, n_categorical=0, pattern_width=0, planted_fraction=0.05)
        query = default_query(spec, target=truth.clean_ate, epsilon=0.15 * abs(truth.clean_ate))

        result = repair_tuples(dataset, query, TupleRepairConfig(estimator=EstimatorConfig(kind="ipw")))

        assert result.removed_count == len(result.removed_ids)
        assert result.hit_range == query.contains(result.ate_after)

    def test_sampled_mode(self, make_synth):
        """Above the sample threshold the repair is found on a sample and expanded"""
        dataset, truth, spec = make_synth(seed=5, n=2000, n_categorical=0, pattern_width=0, planted_fraction=0.05)
        query = default_query(spec, target=truth.clean_ate, epsilon=0.1 * abs(truth.clean_ate))
        config = TupleRepairConfig(sample_threshold=1000, sample_fraction=0.3, knn_k=2, seed=5)

        result = repair_tuples(dataset, query, config)

        assert result.removed_count == len(set(result.removed_ids))
        assert dataset.alive_count == 2000 - result.removed_count
        assert result.ate_after == pytest.approx(AteEngine(dataset, query).ate, abs=1e-9)


    def test_sampled_mode_moves_toward_target(self, make_synth):
        """Expanded neighbour groups are only deleted when they bring the ATE closer"""
        for seed in range(4):
            dataset, truth, spec = make_synth(
                seed=seed, n=3000, n_categorical=0, pattern_width=0, planted_fraction=0.05,
            )
            query = default_query(spec, target=truth.clean_ate, epsilon=0.02 * abs(truth.clean_ate))
            config = TupleRepairConfig(sample_threshold=1000, sample_fraction=0.3, knn_k=20, seed=seed)

            result = repair_tuples(dataset, query, config)

            ates = [result.ate_before] + [e.ate for e in deletions(result)]
            for previous, current in zip(ates, ates[1:]):
                assert (current - previous) * query.direction(previous) > 0

    def test_deterministic(self, make_synth):
        """Same data, query and seed give the same deletions and trace"""
        runs = []
        for _ in range(2):
            dataset, truth, spec = make_synth(
                seed=6, n=800, n_categorical=0, pattern_width=0, planted_fraction=0.05,
            )
            query = default_query(spec, target=truth.clean_ate, epsilon=0.02 * abs(truth.clean_ate))
            runs.append(repair_tuples(dataset, query, TupleRepairConfig(seed=6)))

        first, second = runs
        assert first.removed_ids == second.removed_ids
        assert [(e.action, e.ate) for e in first.trace] == [(e.action, e.ate) for e in second.trace]

    def test_failed_refit_keeps_incremental_estimate(self, subset_sum, subset_sum_query, monkeypatch, caplog):
        """A refit that cannot be computed does not abort the search"""
        def unavailable(engine, mask=None):
            raise Separation("refit diverged")

        monkeypatch.setattr(AteEngine, "refit_ate", unavailable)

        result = repair_tuples(subset_sum, subset_sum_query)

        assert result.hit_range
        assert result.removed_ids == [2]
        assert result.ate_after == pytest.approx(0.0, abs=1e-12)
        assert "Full refit unavailable" in caplog.text


class TestSingleUpdate:
    """Tests for the single-update baseline"""

    def test_fixture(self, subset_sum, subset_sum_query):
        """The baseline also deletes row 2 first and stops"""
        result = repair_tuples_single_update(subset_sum, subset_sum_query)

        assert result.hit_range
        assert result.removed_ids == [2]

    def test_already_in_range(self, subset_sum):
        """Nothing to do inside the interval"""
        query = CausalQuery(treatment="T", outcome="O", target=1.25)

        result = repair_tuples_single_update(subset_sum, query)

        assert result.stop_reason == "already_in_range"
        assert result.removed_ids == []


class TestKnnAmplification:
    """Tests for amplify_with_knn"""

    def test_duplicates_come_along(self, subset_sum, subset_sum_query):
        """All 100 exact copies of a removed tuple are its nearest neighbours"""
        grown = subset_sum.append_rows(np.full(100, 2))

        expanded = amplify_with_knn(grown, subset_sum_query, np.array([2]), k_nn=100)

        assert expanded.tolist() == [2] + list(range(7, 107))

    def test_zero_neighbours(self, subset_sum, subset_sum_query):
        """k_nn = 0 returns the removed tuples themselves"""
        assert amplify_with_knn(subset_sum, subset_sum_query, np.array([1, 2]), k_nn=0).tolist() == [1, 2]

    def test_crowded_seed_stays_within_bound(self, subset_sum, subset_sum_query):
        """More exact copies than k_nn still give at most k_nn + 1 tuples, seed included"""
        grown = subset_sum.append_rows(np.full(200, 2))

        (group,) = knn_neighbors(grown, subset_sum_query, np.array([2]), k_nn=100)

        assert group.size == 101
        assert 2 in group
        assert set(group.tolist()) <= {2} | set(range(7, 207))
