"""
Unit tests for the OLS estimator and its downdates
"""

import numpy as np
import pytest

from src.estimators.design import build_encoder
from src.estimators.ols import ate, downdate_exact, downdate_neumann, fit_ols, neumann_norm
from src.state.schemas import CausalQuery, Schema
from src.data.dataset import Dataset
from src.utils.errors import DegenerateGroups, NormTooLarge, QueryError, RankDeficient


def synth_query(spec) -> CausalQuery:
    return CausalQuery(treatment="T", outcome="O", confounders=tuple(spec.confounder_names), target=0.0)


def removal_rows(state, dataset, query, ids):
    X = state.design.encode(dataset, np.asarray(ids))
    o = dataset.column(query.outcome)[np.asarray(ids)].astype(float)
    return X, o


class TestFitOls:
    """Tests for fit_ols"""

    def test_subset_sum_ate(self, subset_sum, subset_sum_query):
        """Without confounders the ATE is the difference of group means"""
        state = fit_ols(subset_sum, subset_sum_query)

        assert ate(state) == pytest.approx(1.25, abs=1e-12)
        assert state.design.names == ["intercept", "T"]
        assert (state.n_treated, state.n_control) == (4, 3)

    def test_removal_of_row_two(self, subset_sum, subset_sum_query):
        """Refitting without the (T=1, O=5) row gives exactly 0"""
        state = fit_ols(subset_sum, subset_sum_query, subset_sum.mask_without([2]))

        assert ate(state) == pytest.approx(0.0, abs=1e-12)

    def test_matches_least_squares(self, make_synth):
        """Coefficients equal numpy's least squares on [1, T, Z]"""
        dataset, _, spec = make_synth(seed=6, n=1500, n_categorical=0, pattern_width=0)
        query = synth_query(spec)
        mask = dataset.mask_without(np.arange(0, 1500, 5))
        X = np.column_stack(
            [np.ones(dataset.n), dataset.column("T").astype(float)]
            + [dataset.column(c).astype(float) for c in query.confounders]
        )[mask]
        expected, *_ = np.linalg.lstsq(X, dataset.column("O").astype(float)[mask], rcond=None)

        state = fit_ols(dataset, query, mask)

        np.testing.assert_allclose(state.beta, expected, rtol=0, atol=1e-9)
        assert ate(state) == pytest.approx(expected[1], abs=1e-9)

    def test_single_group(self, subset_sum, subset_sum_query):
        """All-treated data cannot identify an effect"""
        with pytest.raises(DegenerateGroups):
            fit_ols(subset_sum, subset_sum_query, subset_sum.mask_without([4, 5, 6]))

    def test_collinear_confounder(self):
        """A confounder equal to the treatment is rank deficient"""
        schema = Schema.of({"T": "numeric-binary", "O": "numeric-continuous", "Z": "numeric-continuous"})
        t = np.array([1, 0, 1, 0, 1, 0])
        dataset = Dataset(schema, {"T": t, "O": np.arange(6.0), "Z": t.astype(float) * 2.0})
        query = CausalQuery(treatment="T", outcome="O", confounders=("Z",), target=0.0)

        with pytest.raises(RankDeficient):
            fit_ols(dataset, query)

    def test_non_binary_treatment(self):
        """Treatment values outside {0, 1} are a query error"""
        schema = Schema.of({"T": "numeric-continuous", "O": "numeric-continuous"})
        dataset = Dataset(schema, {"T": np.array([0.0, 1.0, 2.0]), "O": np.array([1.0, 2.0, 3.0])})

        with pytest.raises(QueryError):
            fit_ols(dataset, CausalQuery(treatment="T", outcome="O", target=0.0))

    def test_categorical_confounder_encoding(self):
        """Categoricals are one-hot with the first sorted level dropped"""
        schema = Schema.of({"T": "numeric-binary", "O": "numeric-continuous", "g": "categorical"})
        dataset = Dataset(
            schema,
            {
                "T": np.array([1, 0, 1, 0, 1, 0]),
                "O": np.array([3.0, 1.0, 4.0, 1.0, 5.0, 2.0]),
                "g": np.array(["b", "a", "c", "b", "a", "c"], dtype=object),
            },
        )
        query = CausalQuery(treatment="T", outcome="O", confounders=("g",), target=0.0)

        encoder = build_encoder(dataset, query)

        assert encoder.names == ["intercept", "T", "g=b", "g=c"]


class TestDowndateExact:
    """Tests for the Woodbury downdate"""

    def test_fixture_downdate(self, subset_sum, subset_sum_query):
        """Removing row 2 by downdate matches the refit value 0"""
        state = fit_ols(subset_sum, subset_sum_query)
        X, o = removal_rows(state, subset_sum, subset_sum_query, [2])

        updated = downdate_exact(state, X, o)

        assert updated.ate == pytest.approx(0.0, abs=1e-12)
        assert updated.n_treated == 3

    def test_empty_removal_is_identity(self, subset_sum, subset_sum_query):
        """r = 0 returns the same state"""
        state = fit_ols(subset_sum, subset_sum_query)

        assert downdate_exact(state, np.empty((0, 2)), np.empty(0)) is state

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_matches_refit(self, make_synth, seed):
        """Random block removals agree with a full refit to 1e-8 per coefficient"""
        dataset, _, spec = make_synth(seed=seed, n=2000, n_categorical=0, pattern_width=0)
        query = synth_query(spec)
        rng = np.random.default_rng(seed)
        state = fit_ols(dataset, query)

        for size in (1, 3, 50):
            ids = np.sort(rng.choice(dataset.n, size=size, replace=False))
            X, o = removal_rows(state, dataset, query, ids)
            updated = downdate_exact(state, X, o)
            refit = fit_ols(dataset, query, dataset.mask_without(ids))

            np.testing.assert_allclose(updated.beta, refit.beta, rtol=0, atol=1e-8)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_sequential_equals_joint(self, make_synth, seed):
        """Removing two blocks one after the other equals removing their union"""
        dataset, _, spec = make_synth(seed=seed, n=1000, n_categorical=0, pattern_width=0)
        query = synth_query(spec)
        rng = np.random.default_rng(seed)
        state = fit_ols(dataset, query)
        ids = rng.choice(dataset.n, size=12, replace=False)
        first, second = np.sort(ids[:4]), np.sort(ids[4:])

        after_first = downdate_exact(state, *removal_rows(state, dataset, query, first))
        stepwise = downdate_exact(after_first, *removal_rows(state, dataset, query, second))
        joint = downdate_exact(state, *removal_rows(state, dataset, query, np.sort(ids)))

        np.testing.assert_allclose(stepwise.beta, joint.beta, rtol=0, atol=1e-8)
        assert (stepwise.n_treated, stepwise.n_control) == (joint.n_treated, joint.n_control)

    def test_removal_emptying_a_group(self, subset_sum, subset_sum_query):
        """Removing every control row is rejected"""
        state = fit_ols(subset_sum, subset_sum_query)
        X, o = removal_rows(state, subset_sum, subset_sum_query, [4, 5, 6])

        with pytest.raises(DegenerateGroups):
            downdate_exact(state, X, o)


class TestDowndateNeumann:
    """Tests for the first-order Neumann downdate"""

    def test_single_row_close_to_exact(self, make_synth):
        """Single-row removals stay within 1e-3 relative of the exact value"""
        dataset, _, spec = make_synth(seed=7, n=1000, n_categorical=0, pattern_width=0)
        query = synth_query(spec)
        state = fit_ols(dataset, query)

        for tuple_id in range(0, 1000, 97):
            X, o = removal_rows(state, dataset, query, [tuple_id])
            exact = downdate_exact(state, X, o).ate
            approx = downdate_neumann(state, X, o).ate
            assert abs(approx - exact) / (abs(exact) + 1e-9) < 1e-3

    def test_guard_fires_on_large_blocks(self, make_synth):
        """Removing 30% of the rows exceeds the norm threshold"""
        dataset, _, spec = make_synth(seed=1, n=1000, n_categorical=0, pattern_width=0)
        query = synth_query(spec)
        state = fit_ols(dataset, query)
        ids = np.random.default_rng(1).choice(1000, size=300, replace=False)
        X, o = removal_rows(state, dataset, query, ids)

        assert neumann_norm(state, X) > 0.5
        with pytest.raises(NormTooLarge):
            downdate_neumann(state, X, o, norm_threshold=0.5)

    def test_staleness_counter(self, subset_sum, subset_sum_query):
        """Each Neumann step marks the state approximate and counts up"""
        state = fit_ols(subset_sum, subset_sum_query)
        X, o = removal_rows(state, subset_sum, subset_sum_query, [4])

        updated = downdate_neumann(state, X, o, norm_threshold=10.0)

        assert updated.staleness == "neumann"
        assert updated.neumann_steps == 1
