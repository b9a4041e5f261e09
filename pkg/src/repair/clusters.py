"""
Cluster index for influence sampling

Tuples are clustered with k-means on standardized [T, encoded Z, O].
Each cluster keeps up to `s` representatives: the member closest to the
centroid plus members at evenly spaced percentiles of the
distance-to-centroid distribution. Every member maps to its nearest
representative.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.preprocessing import StandardScaler

from src.data.dataset import Dataset
from src.estimators.design import build_encoder, outcome_vector, treatment_vector
from src.state.schemas import CausalQuery

logger = logging.getLogger(__name__)

KMEANS_MAX_ITER = 100


def cluster_count(n: int) -> int:
    """k = max(5, min(floor(sqrt(n)), floor(n / 10))), clamped to [1, n]"""
    if n <= 0:
        return 1
    return max(1, min(max(5, min(math.isqrt(n), n // 10)), n))


def tuple_features(dataset: Dataset, query: CausalQuery) -> np.ndarray:
    """
    Standardized [T, encoded Z, O] for every row; the scaler is fitted on
    the alive rows
    """
    encoder = build_encoder(dataset, query, include_treatment=False)
    Z = encoder.encode(dataset)[:, 1:]
    raw = np.column_stack([treatment_vector(dataset, query), Z, outcome_vector(dataset, query)])
    alive = dataset.alive
    scaler = StandardScaler().fit(raw[alive] if alive.any() else raw)
    return scaler.transform(raw)


def representative_percentiles(s: int) -> list[float]:
    """Percentiles for representatives after the centroid-closest one"""
    if s <= 1:
        return []
    if s == 2:
        return [75.0]
    return list(np.linspace(25.0, 75.0, s - 1))


@dataclass
class ClusterIndex:
    """
    k-means partition of the alive tuples.

    assignment[i] is the cluster of row i (-1 for rows outside the index).
    Cluster ids are 0..k-1 with empty clusters dropped.
    """
    k: int
    assignment: np.ndarray
    centroids: np.ndarray
    distances: np.ndarray
    features: np.ndarray = field(repr=False)
    s: int = 2
    representatives: dict[int, list[int]] = field(default_factory=dict)
    rep_assignment: dict[int, int] = field(default_factory=dict)

    def members(self, cluster: int) -> np.ndarray:
        """Sorted ids currently assigned to `cluster`"""
        return np.flatnonzero(self.assignment == cluster)

    def cluster_of(self, tuple_id: int) -> int:
        return int(self.assignment[tuple_id])

    def live_clusters(self) -> list[int]:
        return [c for c in range(self.k) if np.any(self.assignment == c)]

    def _choose_representatives(self, cluster: int) -> None:
        members = self.members(cluster)
        if members.size == 0:
            self.representatives.pop(cluster, None)
            return

        # stable sort: ties go to the lowest id
        ordered = members[np.argsort(self.distances[members], kind="stable")]
        reps = [int(ordered[0])]
        for q in representative_percentiles(self.s):
            position = int(round(q / 100.0 * (ordered.size - 1)))
            candidate = int(ordered[position])
            if candidate not in reps:
                reps.append(candidate)
        self.representatives[cluster] = reps

        rep_points = self.features[reps]
        gaps = np.linalg.norm(self.features[members][:, None, :] - rep_points[None, :, :], axis=2)
        nearest = np.argmin(gaps, axis=1)
        for member, which in zip(members, nearest):
            self.rep_assignment[int(member)] = reps[int(which)]

    def discard(self, tuple_id: int) -> None:
        """Drop a deleted tuple; its cluster re-elects representatives if needed"""
        cluster = int(self.assignment[tuple_id])
        if cluster < 0:
            return
        self.assignment[tuple_id] = -1
        self.rep_assignment.pop(tuple_id, None)
        if tuple_id in self.representatives.get(cluster, []):
            self._choose_representatives(cluster)


def build_cluster_index(
    dataset: Dataset,
    query: CausalQuery,
    k: Optional[int] = None,
    s: int = 2,
    seed: int = 0,
) -> ClusterIndex:
    """
    Cluster the alive tuples

    Args:
        k: cluster count (default: cluster_count(n_alive)); clamped to n_alive
        s: representatives per cluster
        seed: k-means initialization seed
    """
    alive = dataset.alive_ids()
    n = int(alive.size)
    k = cluster_count(n) if k is None else max(1, min(k, n))
    features = tuple_features(dataset, query)

    with warnings.catch_warnings():
        # fewer distinct points than clusters is allowed; those clusters come back empty
        warnings.simplefilter("ignore", ConvergenceWarning)
        kmeans = KMeans(n_clusters=k, n_init=1, max_iter=KMEANS_MAX_ITER, random_state=seed)
        labels = kmeans.fit_predict(features[alive])

    used = np.unique(labels)
    relabel = {int(old): new for new, old in enumerate(used)}
    assignment = np.full(dataset.n, -1, dtype=np.int64)
    assignment[alive] = [relabel[int(label)] for label in labels]
    centroids = kmeans.cluster_centers_[used]

    distances = np.full(dataset.n, np.inf)
    distances[alive] = np.linalg.norm(features[alive] - centroids[assignment[alive]], axis=1)

    index = ClusterIndex(
        k=int(used.size),
        assignment=assignment,
        centroids=centroids,
        distances=distances,
        features=features,
        s=s,
    )
    for cluster in range(index.k):
        index._choose_representatives(cluster)

    if index.k < k:
        logger.debug(f"k-means left {k - index.k} empty clusters; k reduced to {index.k}")
    return index


__all__ = [
    "ClusterIndex",
    "build_cluster_index",
    "cluster_count",
    "tuple_features",
    "representative_percentiles",
]
