#!/usr/bin/env python3
"""
Motion Grouping

Partitions the motion features of one frame pair into motion-consistent groups
with normalized spectral clustering on the inner-product affinity, choosing the
group count K by maximizing the Calinski-Harabasz index over [k_min, k_max].

Pipeline per pair:
1. Affinity A[i][j] = max(0, m_i . m_j); negatively correlated features get no edge
2. Symmetric normalized Laplacian L = D^-1/2 (D - A) D^-1/2
3. Eigenvectors of the K smallest eigenvalues, rows normalized to unit length
4. Seeded k-means++ with restarts, lowest within-cluster sum of squares kept
5. CH index of the raw motion vectors under each K's labels; the best K wins,
   ties to smaller K
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg

from comotion_errors import (
    ClusteringError,
    DegenerateMotionError,
    DimensionMismatchError,
    EigensolverError,
)
from motion_features import MotionFeatureSet

logger = logging.getLogger(__name__)

CH_CAP = 1e12
_ROW_NORM_FLOOR = 1e-12
_COHERENCE_TOLERANCE = 1e-12


class GroupingConfig(BaseModel):
    """Spectral clustering and K-search settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    k_min: int = Field(2, ge=2, le=50)
    k_max: int = Field(8, ge=2, le=50)
    kmeans_restarts: int = Field(10, gt=0)
    kmeans_max_iters: int = Field(300, gt=0)
    rng_seed: int = Field(0, ge=0, lt=2 ** 64)
    degree_floor: float = Field(1e-12, gt=0)

    @model_validator(mode="after")
    def _check_range(self):
        if self.k_min > self.k_max:
            raise ValueError(f"k_min={self.k_min} exceeds k_max={self.k_max}")
        return self


@dataclass(frozen=True)
class AffinityMatrix:
    """Symmetric nonnegative affinity between motion features."""

    a: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatchError(f"Affinity must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise EigensolverError("Affinity contains non-finite entries")
        if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(a).max(initial=0.0)))):
            raise ClusteringError("Affinity must be symmetric")
        if np.any(a < 0):
            raise ClusteringError("Affinity entries must be nonnegative")
        object.__setattr__(self, "a", a)

    @property
    def size(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class Partition:
    """Group labels of one pair plus the embedding they were computed on."""

    labels: np.ndarray
    k: int
    ch_score: float
    embedding: np.ndarray

    def groups(self):
        return [np.flatnonzero(self.labels == g) for g in range(self.k)]


# ============================================================================
# AFFINITY AND SPECTRUM
# ============================================================================


def affinity_from_vectors(vectors: np.ndarray) -> AffinityMatrix:
    """Clamped inner-product affinity of raw motion vectors."""
    m = np.asarray(vectors, dtype=np.float64)
    raw = m @ m.T
    a = np.maximum(0.5 * (raw + raw.T), 0.0)
    return AffinityMatrix(a)


def affinity(m: MotionFeatureSet) -> AffinityMatrix:
    return affinity_from_vectors(m.features)


def _laplacian_spectrum(a: AffinityMatrix, cfg: GroupingConfig):
    """Eigenpairs of L_sym in ascending order plus the zero-degree mask."""
    A = a.a
    degree = A.sum(axis=1)
    isolated = degree <= 0.0
    inv_sqrt = 1.0 / np.sqrt(np.maximum(degree, cfg.degree_floor))
    lap = inv_sqrt[:, None] * (np.diag(degree) - A) * inv_sqrt[None, :]
    lap = 0.5 * (lap + lap.T)
    # Isolated vertices sit at eigenvalue 1, away from the cluster eigenvectors
    lap[isolated, isolated] = 1.0
    if not np.all(np.isfinite(lap)):
        raise EigensolverError("Laplacian contains non-finite entries")
    try:
        values, vectors = linalg.eigh(lap)
    except (linalg.LinAlgError, ValueError) as e:
        raise EigensolverError(f"Eigendecomposition failed: {e}") from e
    return values, vectors, isolated


def _embedding(a: AffinityMatrix, vectors: np.ndarray, isolated: np.ndarray, k: int) -> np.ndarray:
    F = vectors[:, :k].copy()

    # Fix eigenvector signs so the embedding is reproducible
    pivots = np.argmax(np.abs(F), axis=0)
    signs = np.sign(F[pivots, np.arange(k)])
    signs[signs == 0] = 1.0
    F *= signs

    # Vertices with identical affinity rows are interchangeable; embed them identically
    _, inverse = np.unique(np.round(a.a, 12), axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    counts = np.bincount(inverse)
    if np.any(counts > 1):
        sums = np.zeros((len(counts), k))
        np.add.at(sums, inverse, F)
        F = sums[inverse] / counts[inverse, None]

    norms = np.linalg.norm(F, axis=1)
    keep = norms > _ROW_NORM_FLOOR
    F[keep] /= norms[keep, None]
    F[~keep] = 0.0
    F[isolated] = 0.0
    return F


# ============================================================================
# K-MEANS
# ============================================================================


def _kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    first = int(rng.integers(n))
    centers[0] = X[first]
    dist2 = ((X - X[first]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = dist2.sum()
        if total <= 0.0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=dist2 / total))
        centers[c] = X[pick]
        dist2 = np.minimum(dist2, ((X - X[pick]) ** 2).sum(axis=1))
    return centers


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iters: int):
    """Lloyd iterations; returns (labels, inertia) or None when a cluster empties."""
    k = centers.shape[0]
    for _ in range(max_iters):
        dist = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(dist, axis=1)
        counts = np.bincount(labels, minlength=k)
        if np.any(counts == 0):
            return None
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        updated = sums / counts[:, None]
        converged = np.allclose(updated, centers, rtol=0.0, atol=1e-12)
        centers = updated
        if converged:
            break
    dist = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(dist, axis=1)
    if np.any(np.bincount(labels, minlength=k) == 0):
        return None
    inertia = float(dist[np.arange(len(X)), labels].sum())
    return labels, inertia


def _split_until(X: np.ndarray, k: int) -> np.ndarray:
    """
    Deterministic fallback: repeatedly split the largest cluster at the median
    of its projection onto its first principal direction (ties by index).
    """
    n = X.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    for new_label in range(1, k):
        sizes = np.bincount(labels, minlength=new_label)
        target = int(np.argmax(sizes))
        members = np.flatnonzero(labels == target)
        if len(members) < 2:
            break
        pts = X[members] - X[members].mean(axis=0)
        _, _, vh = np.linalg.svd(pts, full_matrices=False)
        projection = pts @ vh[0]
        order = np.lexsort((members, projection))
        upper = members[order[len(members) - len(members) // 2:]]
        labels[upper] = new_label
    return labels


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel clusters in order of first appearance."""
    _, first = np.unique(labels, return_index=True)
    mapping = np.empty(labels.max() + 1, dtype=np.int64)
    mapping[labels[np.sort(first)]] = np.arange(len(first))
    return mapping[labels]


def kmeans(X: np.ndarray, k: int, cfg: GroupingConfig, seed) -> np.ndarray:
    """Seeded k-means++ with restarts; every returned cluster is non-empty."""
    rng = np.random.default_rng(seed)
    best: Optional[Tuple[np.ndarray, float]] = None
    for _ in range(cfg.kmeans_restarts):
        outcome = _lloyd(X, _kmeans_plusplus(X, k, rng), cfg.kmeans_max_iters)
        if outcome is not None and (best is None or outcome[1] < best[1]):
            best = outcome
    if best is None:
        logger.debug(f"k-means left an empty cluster in every restart (k={k}); splitting deterministically")
        return _canonical(_split_until(X, k))
    return _canonical(best[0])


# ============================================================================
# CLUSTER VALIDITY
# ============================================================================


def ch_index(points: np.ndarray, labels: np.ndarray) -> float:
    """
    Calinski-Harabasz index [tr(B)/(K-1)] / [tr(W)/(n-K)].

    Returns the CH_CAP sentinel when the within-cluster scatter vanishes.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels)
    n = X.shape[0]
    if labels.shape != (n,):
        raise DimensionMismatchError(f"{len(labels)} labels for {n} points")
    _, inverse = np.unique(labels, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    counts = np.bincount(inverse)
    k = len(counts)
    if k < 2 or k >= n:
        raise ClusteringError(f"CH index needs 2 <= K < n, got K={k}, n={n}")

    centroids = np.zeros((k, X.shape[1]))
    np.add.at(centroids, inverse, X)
    centroids /= counts[:, None]
    overall = X.mean(axis=0)
    between = float((counts * ((centroids - overall) ** 2).sum(axis=1)).sum())
    within = float(((X - centroids[inverse]) ** 2).sum())
    if within <= 0.0:
        return CH_CAP
    return min((between / (k - 1)) / (within / (n - k)), CH_CAP)


# ============================================================================
# PARTITIONS
# ============================================================================


def _check_k(k: int, n: int) -> None:
    if not 2 <= k <= 50:
        raise ClusteringError(f"k must lie in [2, 50], got {k}")
    if k >= n:
        raise ClusteringError(f"k={k} needs more than {k} features, got {n}")


def _scoring_points(points: Optional[np.ndarray], n: int) -> Optional[np.ndarray]:
    if points is None:
        return None
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != n:
        raise DimensionMismatchError(f"Scoring points must have {n} rows, got shape {X.shape}")
    return X


def _partition_from_spectrum(a, vectors, isolated, k, cfg, points=None) -> Partition:
    embedding = _embedding(a, vectors, isolated, k)
    labels = kmeans(embedding, k, cfg, seed=[cfg.rng_seed, k])
    scored = embedding if points is None else points
    return Partition(labels=labels, k=k, ch_score=ch_index(scored, labels), embedding=embedding)


def spectral_partition(
    a: AffinityMatrix, k: int, cfg: Optional[GroupingConfig] = None, points: Optional[np.ndarray] = None
) -> Partition:
    """
    Normalized spectral clustering of ``a`` into exactly ``k`` non-empty groups.

    ``ch_score`` is computed on ``points`` when given, otherwise on the embedding.
    """
    cfg = cfg or GroupingConfig()
    _check_k(k, a.size)
    _, vectors, isolated = _laplacian_spectrum(a, cfg)
    return _partition_from_spectrum(a, vectors, isolated, k, cfg, _scoring_points(points, a.size))


def _is_coherent(a: AffinityMatrix) -> bool:
    """All affinity rows equal and nonzero, i.e. every feature is the same vector."""
    A = a.a
    scale = float(np.abs(A).max(initial=0.0))
    return scale > 0.0 and bool(np.all(np.abs(A - A[0]) <= _COHERENCE_TOLERANCE * scale))


def best_partition_from_affinity(
    a: AffinityMatrix, cfg: Optional[GroupingConfig] = None, points: Optional[np.ndarray] = None
) -> Partition:
    """
    Spectral partition maximizing CH over K in [k_min, min(k_max, n-1)].

    CH is evaluated on ``points`` when given, otherwise on each K's embedding.
    """
    cfg = cfg or GroupingConfig()
    n = a.size
    points = _scoring_points(points, n)
    if not np.any(a.a.sum(axis=1) > 0.0):
        raise DegenerateMotionError("All motion features are zero")
    if _is_coherent(a):
        # One shared motion: a single group, scored like a perfect separation
        return Partition(
            labels=np.zeros(n, dtype=np.int64), k=1, ch_score=CH_CAP, embedding=np.ones((n, 1))
        )

    k_values = range(cfg.k_min, min(cfg.k_max, n - 1) + 1)
    if len(k_values) == 0:
        raise ClusteringError(f"No admissible K for {n} features with k_min={cfg.k_min}")

    _, vectors, isolated = _laplacian_spectrum(a, cfg)
    best: Optional[Partition] = None
    for k in k_values:
        candidate = _partition_from_spectrum(a, vectors, isolated, k, cfg, points)
        if best is None or candidate.ch_score > best.ch_score:
            best = candidate
    logger.debug(f"Chosen K={best.k} (CH={best.ch_score:.4g})")
    return best


def best_partition_from_vectors(vectors: np.ndarray, cfg: Optional[GroupingConfig] = None) -> Partition:
    """
    Best CH partition of raw motion vectors.

    Labels come from the spectral embedding of their clamped inner-product
    affinity; every K is scored on the vectors themselves.
    """
    m = np.asarray(vectors, dtype=np.float64)
    return best_partition_from_affinity(affinity_from_vectors(m), cfg, points=m)


def best_partition(m: MotionFeatureSet, cfg: Optional[GroupingConfig] = None) -> Partition:
    """Best CH partition of a gated frame pair."""
    if not m.passes_gate:
        raise ClusteringError(f"Pair {m.pair_id} did not pass the magnitude gate")
    return best_partition_from_vectors(m.features, cfg)


def write_partition_dump(
    partitions: Iterable[Tuple[Tuple[int, int], Partition]], path: Union[str, Path]
) -> None:
    """Diagnostics dump: one JSON record {pair, k, ch_score, labels} per pair."""
    records = [
        {
            "pair": [int(pair[0]), int(pair[1])],
            "k": int(part.k),
            "ch_score": float(part.ch_score),
            "labels": [int(x) for x in part.labels],
        }
        for pair, part in partitions
    ]
    Path(path).write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")
