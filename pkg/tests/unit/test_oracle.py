"""
Unit tests for the exhaustive oracles
"""

import numpy as np
import pytest

from src.bench.oracle import opt_pattern, opt_tuple, pattern_space_size
from src.bench.synth import default_query
from src.data.dataset import Dataset
from src.estimators.ols import fit_ols
from src.state.schemas import CausalQuery, Pattern, Schema
from src.utils.config import DEFAULT_HIT_TOLERANCE
from src.utils.errors import (
    InstanceTooLarge,
    NoEligibleAttributes,
    PatternSpaceTooLarge,
    RepairError,
)


def tiny_dataset(seed):
    """Ten rows, five per group, one confounder and two shifted treated outcomes"""
    rng = np.random.default_rng(seed)
    T = np.array([1, 0] * 5)
    Z = rng.standard_normal(10)
    O = T + Z + 0.3 * rng.standard_normal(10)
    O[[0, 2]] += 4.0
    schema = Schema.of({"T": "numeric-binary", "O": "numeric-continuous", "Z": "numeric-continuous"})
    return Dataset(schema, {"T": T, "O": O, "Z": Z})


def smallest_hitting_set(dataset, query):
    """Independent recursive search for the minimum deletion cardinality"""
    n = dataset.n

    def hits(removed):
        mask = np.ones(n, dtype=bool)
        mask[list(removed)] = False
        try:
            return query.contains(fit_ols(dataset, query, mask).ate, DEFAULT_HIT_TOLERANCE)
        except RepairError:
            return False

    def search(start, removed, size):
        if len(removed) == size:
            return hits(removed)
        return any(search(i + 1, removed + [i], size) for i in range(start, n))

    for size in range(1, n):
        if search(0, [], size):
            return size
    return None


class TestOptTuple:
    """Tests for opt_tuple"""

    def test_fixture(self, subset_sum, subset_sum_query):
        """The optimum on the fixture is the single row 2"""
        result = opt_tuple(subset_sum, subset_sum_query)

        assert result.hit_range
        assert result.stop_reason == "hit"
        assert result.removed_ids == [2]
        assert result.removed_count == 1
        assert result.ate_after == pytest.approx(0.0, abs=1e-12)
        assert not subset_sum.is_alive(2)

    def test_zero_budget(self, subset_sum, subset_sum_query):
        """No deletions allowed, no hit"""
        result = opt_tuple(subset_sum, subset_sum_query, budget=0)

        assert not result.hit_range
        assert result.stop_reason == "infeasible"
        assert subset_sum.alive_count == 7

    def test_already_in_range(self, subset_sum):
        """The empty set is optimal when the ATE already lies in the interval"""
        query = CausalQuery(treatment="T", outcome="O", target=1.25)

        result = opt_tuple(subset_sum, query)

        assert result.stop_reason == "already_in_range"
        assert result.removed_count == 0

    def test_instance_too_large(self, subset_sum, subset_sum_query):
        """The enumeration refuses instances above max_n"""
        with pytest.raises(InstanceTooLarge):
            opt_tuple(subset_sum, subset_sum_query, max_n=5)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_independent_enumeration(self, seed):
        """Minimum cardinality agrees with a recursive enumeration on tiny instances"""
        dataset = tiny_dataset(seed)
        query = CausalQuery(treatment="T", outcome="O", confounders=("Z",), target=0.0)
        observed = fit_ols(dataset, query).ate
        query = query.model_copy(update={"target": 0.8 * observed, "epsilon": 0.1 * abs(observed)})
        expected = smallest_hitting_set(dataset, query)

        result = opt_tuple(dataset, query)

        if expected is None:
            assert result.stop_reason == "infeasible"
        else:
            assert result.hit_range
            assert result.removed_count == expected


class TestOptPattern:
    """Tests for opt_pattern / pattern_space_size"""

    def test_planted_marker_is_optimal(self, make_synth):
        """The marker value alone is the minimum-support pattern restoring the clean ATE"""
        dataset, truth, spec = make_synth(
            seed=0, n=200, planted_fraction=0.1, n_categorical=1, categorical_levels=3, pattern_width=1,
        )
        query = default_query(spec, target=truth.clean_ate, epsilon=1e-6 * abs(truth.clean_ate))

        result = opt_pattern(dataset, query)

        assert result.hit_range
        assert result.pattern == Pattern.of({"g0": "v0"})
        assert result.removed_count == truth.planted_count == 20
        assert dataset.alive_count == 180

    def test_space_size(self, identifier_table):
        """Four binary attributes give 3^4 patterns"""
        assert pattern_space_size(identifier_table, ["S1", "S2", "S3", "S4"]) == 81
        assert pattern_space_size(identifier_table, []) == 1

    def test_space_too_large(self, make_synth):
        """A limit below the pattern count refuses to enumerate"""
        dataset, truth, spec = make_synth(seed=1, n=200, planted_fraction=0.1, n_categorical=2)
        query = default_query(spec, target=truth.clean_ate)

        with pytest.raises(PatternSpaceTooLarge):
            opt_pattern(dataset, query, max_patterns=10)

    def test_no_eligible_attributes(self, subset_sum, subset_sum_query):
        """The bare fixture has nothing to build patterns from"""
        with pytest.raises(NoEligibleAttributes):
            opt_pattern(subset_sum, subset_sum_query)
