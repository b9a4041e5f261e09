"""
Unit tests for the k-means cluster index
"""

import numpy as np
import pytest

from src.bench.synth import default_query
from src.repair.clusters import (
    build_cluster_index,
    cluster_count,
    representative_percentiles,
    tuple_features,
)


def _query(spec):
    return default_query(spec, target=0.0)


class TestClusterCount:
    """Tests for cluster_count"""

    @pytest.mark.parametrize(
        "n, expected",
        [(0, 1), (3, 3), (7, 5), (100, 10), (10_000, 100), (1_000_000, 1000)],
    )
    def test_formula(self, n, expected):
        """max(5, min(sqrt(n), n/10)) clamped to n"""
        assert cluster_count(n) == expected


class TestRepresentativePercentiles:
    """Tests for representative_percentiles"""

    def test_two_representatives(self):
        """s = 2 adds the 75th percentile member"""
        assert representative_percentiles(2) == [75.0]

    def test_single_representative(self):
        """s = 1 keeps only the centroid-closest member"""
        assert representative_percentiles(1) == []

    def test_evenly_spaced(self):
        """Larger s spreads over [25, 75]"""
        assert representative_percentiles(4) == pytest.approx([25.0, 50.0, 75.0])


class TestBuildClusterIndex:
    """Tests for build_cluster_index"""

    def test_every_alive_row_assigned(self, subset_sum, subset_sum_query):
        """Alive rows get a cluster, deleted rows get -1"""
        subset_sum.delete([6])

        index = build_cluster_index(subset_sum, subset_sum_query)

        assert index.assignment[6] == -1
        assert (index.assignment[:6] >= 0).all()
        assert 1 <= index.k <= 5
        assert index.live_clusters() == list(range(index.k))

    def test_representatives_are_members(self, make_synth):
        """Representatives belong to their cluster and every member maps to one"""
        dataset, _, spec = make_synth(n=500, n_categorical=0, pattern_width=0)
        query = _query(spec)

        index = build_cluster_index(dataset, query, s=3, seed=1)

        for cluster, reps in index.representatives.items():
            members = set(index.members(cluster).tolist())
            assert 1 <= len(reps) <= 3
            assert set(reps) <= members
        assert set(index.rep_assignment) == set(range(500))

    def test_seeded(self, make_synth):
        """Same seed, same partition"""
        dataset, _, spec = make_synth(n=400, n_categorical=0, pattern_width=0)
        query = _query(spec)

        first = build_cluster_index(dataset, query, seed=5)
        second = build_cluster_index(dataset, query, seed=5)

        np.testing.assert_array_equal(first.assignment, second.assignment)

    def test_discard_reelects(self, make_synth):
        """Discarding a representative picks a new one from the remaining members"""
        dataset, _, spec = make_synth(n=300, n_categorical=0, pattern_width=0)
        index = build_cluster_index(dataset, _query(spec), seed=0)
        cluster = index.live_clusters()[0]
        rep = index.representatives[cluster][0]

        index.discard(rep)

        assert index.assignment[rep] == -1
        assert rep not in index.representatives.get(cluster, [])
        assert rep not in index.rep_assignment

    def test_features_are_standardized(self, make_synth):
        """Columns have zero mean and unit variance over alive rows"""
        dataset, _, spec = make_synth(n=300, n_categorical=0, pattern_width=0)

        features = tuple_features(dataset, _query(spec))

        assert features.shape == (300, 2 + spec.n_confounders)
        np.testing.assert_allclose(features.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(features.std(axis=0), 1.0, atol=1e-9)
