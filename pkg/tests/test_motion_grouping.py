#!/usr/bin/env python3
"""
Tests for spectral motion grouping and the Calinski-Harabasz index.
"""

import json
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import calinski_harabasz_score

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from comotion_errors import ClusteringError, DegenerateMotionError, DimensionMismatchError, EigensolverError
from motion_features import MotionFeatureSet
from motion_grouping import (
    CH_CAP,
    AffinityMatrix,
    GroupingConfig,
    affinity,
    affinity_from_vectors,
    best_partition,
    best_partition_from_affinity,
    best_partition_from_vectors,
    ch_index,
    kmeans,
    spectral_partition,
    write_partition_dump,
)

BUNDLE_DIRECTIONS = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]) / np.array([[1.0], [1.0], [np.sqrt(2.0)]])


def planted_bundles(seed: int, noise_fraction: float = 0.1, sizes=(17, 17, 17)):
    """Direction bundles with magnitudes in [1, 2] and proportional noise."""
    rng = np.random.default_rng(seed)
    truth = np.repeat(np.arange(len(sizes)), sizes)
    magnitudes = rng.uniform(1.0, 2.0, size=len(truth))
    vectors = BUNDLE_DIRECTIONS[truth] * magnitudes[:, None]
    vectors += rng.normal(size=vectors.shape) * noise_fraction * magnitudes[:, None]
    return vectors, truth


def bundle_miniature(rng: np.random.Generator):
    """
    Eight features: two tight triangles and a near-duplicate pair on the bundle
    directions, under a random overall scale and rotation.
    """
    centers = 1.5 * BUNDLE_DIRECTIONS
    parts = []
    for center in centers[:2]:
        angles = rng.uniform(0.0, 2.0 * np.pi) + 2.0 * np.pi * np.arange(3) / 3.0
        parts.append(center + 0.1 * np.column_stack([np.cos(angles), np.sin(angles)]))
    phi = rng.uniform(0.0, 2.0 * np.pi)
    offset = 0.01 * np.array([np.cos(phi), np.sin(phi)])
    parts.append(np.vstack([centers[2] + offset, centers[2] - offset]))
    psi = rng.uniform(0.0, 2.0 * np.pi)
    rotation = np.array([[np.cos(psi), -np.sin(psi)], [np.sin(psi), np.cos(psi)]])
    vectors = rng.uniform(1.0, 2.0) * np.vstack(parts) @ rotation.T
    return vectors, np.array([0, 0, 0, 1, 1, 1, 2, 2])


def label_agreement(labels: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of labels matching the truth after optimal relabeling."""
    k = max(labels.max(), truth.max()) + 1
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, truth), 1)
    rows, cols = linear_sum_assignment(-confusion)
    return confusion[rows, cols].sum() / len(truth)


def direct_ch(points: np.ndarray, labels: np.ndarray) -> float:
    """Scatter traces by explicit loops."""
    n = len(points)
    groups = sorted(set(labels.tolist()))
    overall = points.mean(axis=0)
    between = within = 0.0
    for g in groups:
        members = points[labels == g]
        centroid = members.mean(axis=0)
        between += len(members) * float(((centroid - overall) ** 2).sum())
        for p in members:
            within += float(((p - centroid) ** 2).sum())
    k = len(groups)
    return (between / (k - 1)) / (within / (n - k))


def set_partitions(n: int):
    """Every labeling of n items in canonical (restricted growth) form."""
    def grow(prefix, top):
        if len(prefix) == n:
            yield np.array(prefix)
            return
        for label in range(top + 2):
            yield from grow(prefix + [label], max(top, label))
    yield from grow([0], 0)


def assert_valid_partition(part, n: int):
    assert part.labels.shape == (n,)
    assert set(part.labels.tolist()) == set(range(part.k))
    assert np.isfinite(part.ch_score)


class TestAffinity:
    """Clamped inner-product affinity."""

    def test_examples(self):
        a = affinity_from_vectors(np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])).a
        assert a[0, 1] == 2.0
        assert a[0, 2] == 0.0
        assert a[0, 3] == 0.0
        assert a[1, 1] == 4.0

    def test_symmetric_nonnegative(self):
        m = MotionFeatureSet.from_vectors((0, 1), np.random.default_rng(0).normal(size=(51, 2)))
        a = affinity(m).a
        assert np.array_equal(a, a.T)
        assert np.all(a >= 0)
        assert np.allclose(np.diag(a), m.magnitudes ** 2)

    def test_rejects_asymmetric_and_non_finite(self):
        with pytest.raises(ClusteringError):
            AffinityMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
        with pytest.raises(EigensolverError):
            AffinityMatrix(np.array([[np.nan, 0.0], [0.0, 1.0]]))


class TestCalinskiHarabasz:
    """Standard-orientation CH index."""

    def test_worked_example(self):
        points = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
        assert ch_index(points, np.array([0, 0, 1, 1])) == pytest.approx(200.0, abs=1e-9)

    def test_collapsed_clusters_hit_cap(self):
        points = np.array([[0.0, 0.0], [0.0, 0.0], [3.0, 3.0], [3.0, 3.0]])
        assert ch_index(points, np.array([0, 0, 1, 1])) == CH_CAP

    def test_matches_direct_and_library_evaluation(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            n = int(rng.integers(6, 40))
            k = int(rng.integers(2, min(6, n - 1) + 1))
            points = rng.normal(size=(n, int(rng.integers(1, 5))))
            labels = np.concatenate([np.arange(k), rng.integers(0, k, size=n - k)])
            value = ch_index(points, labels)
            assert value == pytest.approx(direct_ch(points, labels), rel=1e-9)
            assert value == pytest.approx(calinski_harabasz_score(points, labels), rel=1e-9)

    def test_true_labels_beat_permutations(self):
        rng = np.random.default_rng(5)
        wins = 0
        for _ in range(100):
            truth = np.repeat([0, 1, 2], 10)
            points = rng.normal(size=(30, 2)) * 0.3 + np.array([[0, 0], [4, 0], [0, 4]])[truth]
            wins += ch_index(points, truth) >= ch_index(points, rng.permutation(truth))
        assert wins >= 95

    def test_needs_two_to_n_minus_one_clusters(self):
        points = np.arange(8.0).reshape(4, 2)
        with pytest.raises(ClusteringError):
            ch_index(points, np.zeros(4, dtype=int))
        with pytest.raises(ClusteringError):
            ch_index(points, np.arange(4))


class TestSpectralPartition:
    """Fixed-K normalized spectral clustering."""

    def test_block_diagonal(self):
        a = AffinityMatrix(np.kron(np.eye(2), np.ones((2, 2))))
        part = spectral_partition(a, 2)
        assert part.labels.tolist() == [0, 0, 1, 1]

    def test_identical_features_split_by_index(self):
        a = affinity_from_vectors(np.tile([1.0, 1.0], (51, 1)))
        part = spectral_partition(a, 2)
        assert_valid_partition(part, 51)
        assert part.k == 2
        assert part.labels[0] != part.labels[50]
        assert np.all(np.diff(part.labels) >= 0)

    def test_orthogonal_features_any_valid_partition(self):
        part = spectral_partition(AffinityMatrix(np.eye(6)), 2)
        assert_valid_partition(part, 6)

    def test_k_range_checked(self):
        a = AffinityMatrix(np.ones((4, 4)))
        with pytest.raises(ClusteringError):
            spectral_partition(a, 1)
        with pytest.raises(ClusteringError):
            spectral_partition(a, 4)

    def test_embedding_rows_unit_or_zero(self):
        vectors, _ = planted_bundles(0)
        part = spectral_partition(affinity_from_vectors(vectors), 3)
        norms = np.linalg.norm(part.embedding, axis=1)
        assert np.allclose(norms[norms > 0], 1.0)

    def test_kmeans_clusters_non_empty(self):
        X = np.random.default_rng(2).normal(size=(30, 3))
        labels = kmeans(X, 5, GroupingConfig(), seed=[0, 5])
        assert set(labels.tolist()) == set(range(5))


class TestBestPartition:
    """CH-driven choice of K."""

    def test_recovers_planted_bundles(self, test_config):
        cfg = test_config["grouping"]
        successes = 0
        for seed in range(cfg["quick_bundle_seeds"]):
            vectors, truth = planted_bundles(seed, cfg["noise_fraction"])
            part = best_partition_from_vectors(vectors)
            successes += part.k == 3 and label_agreement(part.labels, truth) >= cfg["min_label_agreement"]
        assert successes >= cfg["min_success_fraction"] * cfg["quick_bundle_seeds"]

    @pytest.mark.slow
    def test_recovers_planted_bundles_all_seeds(self, test_config):
        cfg = test_config["grouping"]
        successes = 0
        for seed in range(cfg["bundle_seeds"]):
            vectors, truth = planted_bundles(1000 + seed, cfg["noise_fraction"])
            part = best_partition_from_vectors(vectors, GroupingConfig(rng_seed=seed))
            successes += part.k == 3 and label_agreement(part.labels, truth) >= cfg["min_label_agreement"]
        assert successes >= cfg["min_success_fraction"] * cfg["bundle_seeds"]

    def test_scale_invariance(self):
        vectors, _ = planted_bundles(3)
        reference = best_partition_from_vectors(vectors).labels
        for c in (0.5, 4.0):
            labels = best_partition_from_vectors(c * vectors).labels
            assert np.array_equal(labels, reference)

    def test_anti_parallel_bundles_separate(self):
        rng = np.random.default_rng(8)
        vectors = np.vstack([np.tile([0.0, -1.5], (4, 1)), np.tile([0.0, 1.5], (4, 1))])
        vectors += rng.normal(scale=0.05, size=vectors.shape)
        part = best_partition_from_vectors(vectors, GroupingConfig(k_max=4))
        assert len(set(part.labels[:4]) & set(part.labels[4:])) == 0

    def test_matches_brute_force_on_miniatures(self, test_config):
        rng = np.random.default_rng(21)
        cfg = GroupingConfig(k_min=2, k_max=4)
        for _ in range(test_config["grouping"]["brute_force_instances"]):
            vectors, truth = bundle_miniature(rng)
            best = best_partition_from_vectors(vectors, cfg)
            brute = max(ch_index(vectors, labels) for labels in set_partitions(8) if 2 <= labels.max() + 1 <= 4)
            assert best.ch_score == pytest.approx(brute, rel=1e-9)
            assert best.k == 3
            assert label_agreement(best.labels, truth) == 1.0

    def test_scored_on_vectors_not_embedding(self):
        vectors, _ = planted_bundles(2)
        part = best_partition_from_vectors(vectors)
        assert part.ch_score == pytest.approx(ch_index(vectors, part.labels), rel=1e-12)
        assert part.ch_score < CH_CAP

    def test_scoring_points_must_match_affinity(self):
        a = affinity_from_vectors(np.eye(4))
        with pytest.raises(DimensionMismatchError):
            spectral_partition(a, 2, points=np.zeros((3, 2)))

    def test_single_k_range(self):
        vectors, _ = planted_bundles(4)
        part = best_partition_from_vectors(vectors, GroupingConfig(k_min=2, k_max=2))
        assert part.k == 2

    def test_coherent_motion_forms_one_group(self):
        m = MotionFeatureSet.from_vectors((0, 1), np.tile([1.0, 0.5], (51, 1)))
        part = best_partition(m)
        assert part.k == 1
        assert np.all(part.labels == 0)
        assert part.ch_score == CH_CAP

    def test_all_zero_motion(self):
        with pytest.raises(DegenerateMotionError):
            best_partition_from_vectors(np.zeros((51, 2)))
        with pytest.raises(DegenerateMotionError):
            best_partition_from_affinity(AffinityMatrix(np.zeros((51, 51))))

    def test_requires_gated_pair(self):
        m = MotionFeatureSet.from_vectors((0, 1), np.zeros((51, 2)))
        with pytest.raises(ClusteringError):
            best_partition(m)

    def test_deterministic(self):
        vectors, _ = planted_bundles(6, noise_fraction=0.4)
        first = best_partition_from_vectors(vectors, GroupingConfig(rng_seed=9))
        second = best_partition_from_vectors(vectors, GroupingConfig(rng_seed=9))
        assert np.array_equal(first.labels, second.labels)
        assert first.ch_score == second.ch_score

    def test_k_min_above_feature_count(self):
        with pytest.raises(ClusteringError):
            best_partition_from_vectors(np.eye(3), GroupingConfig(k_min=3, k_max=3))

    def test_config_range(self):
        with pytest.raises(ValueError):
            GroupingConfig(k_min=5, k_max=3)

    def test_partition_dump(self, tmp_path):
        vectors, _ = planted_bundles(1)
        part = best_partition_from_vectors(vectors)
        path = tmp_path / "partitions.json"
        write_partition_dump([((0, 1), part)], path)
        records = json.loads(path.read_text())
        assert records[0]["pair"] == [0, 1]
        assert records[0]["k"] == part.k
        assert len(records[0]["labels"]) == 51
