#!/usr/bin/env python3
"""
Co-motion Patterns

Turns per-pair landmark partitions into binary correlation matrices, pools them
into a CH-weighted co-motion pattern, normalizes the pattern over its strict
lower triangle and compares patterns with the Jensen-Shannon divergence.

Features:
- Correlation matrices: rho[i][j] = 1 iff landmarks i and j share a group
- Weighted accumulation in canonical (video_id, pair_id) order, mergeable partial sums
- L1 normalization over the 1275 strict-lower-triangle entries with epsilon smoothing
- Jensen-Shannon divergence (natural log, bounded by ln 2)
- Pattern CSV + JSON sidecar, PGM heatmaps, compressed rho archives
- Convergence curves and pattern differences for inspection
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import rel_entr

from artifact_schema import read_artifact, write_artifact
from comotion_errors import (
    DimensionMismatchError,
    EmptyInputError,
    MissingInputError,
    NotNormalizedError,
    SchemaError,
    ZeroWeightError,
)
from flow_io import write_gray_image
from landmark_tracks import LANDMARK_COUNT
from motion_grouping import CH_CAP, Partition

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
PairId = Tuple[int, int]
WeightMode = Literal["ch", "k-times-ch"]

TRIANGLE_SIZE = LANDMARK_COUNT * (LANDMARK_COUNT - 1) // 2
NORMALIZATION_TOLERANCE = 1e-9
LN2 = float(np.log(2.0))


class PatternConfig(BaseModel):
    """Pattern weighting and smoothing."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    weight_mode: WeightMode = Field("ch", description="Per-pair weight: ch_score, or k * ch_score")
    epsilon: float = Field(1e-8, ge=0, description="Additive smoothing, relative to max(acc)")


# ============================================================================
# DOMAIN TYPES
# ============================================================================


@dataclass(frozen=True)
class CorrelationMatrix:
    """Binary co-cluster matrix of one frame pair."""

    rho: np.ndarray
    weight: float
    pair_id: PairId
    k: int
    video_id: str = ""

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.uint8)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise DimensionMismatchError(f"Correlation matrix must be square, got shape {rho.shape}")
        if not np.isfinite(self.weight) or self.weight < 0:
            raise ZeroWeightError(f"Pair {self.pair_id}: weight must be finite and >= 0, got {self.weight}")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "pair_id", (int(self.pair_id[0]), int(self.pair_id[1])))

    @property
    def size(self) -> int:
        return self.rho.shape[0]


@dataclass(frozen=True)
class CoMotionPattern:
    """Weighted sum of correlation matrices."""

    acc: np.ndarray
    total_weight: float
    pair_count: int
    weight_mode: WeightMode = "ch"
    video_id: str = ""
    weights: Tuple[float, ...] = field(default=(), repr=False)

    def mean_matrix(self) -> np.ndarray:
        """acc / total_weight, the matrix stored in pattern CSV files."""
        if self.total_weight <= 0:
            raise ZeroWeightError(f"Pattern {self.video_id or '<unnamed>'} has zero total weight")
        return self.acc / self.total_weight


@dataclass(frozen=True)
class NormalizedPattern:
    """Strict-lower-triangle distribution of a co-motion pattern."""

    p: np.ndarray
    smoothed: bool = True

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64).reshape(-1)
        _check_distribution(p, "pattern")
        object.__setattr__(self, "p", p)

    @property
    def landmark_count(self) -> int:
        return _landmarks_for_triangle(len(self.p))

    def matrix(self) -> np.ndarray:
        """Symmetric matrix with the distribution on both triangles and a zero diagonal."""
        n = self.landmark_count
        out = np.zeros((n, n))
        rows, cols = np.tril_indices(n, -1)
        out[rows, cols] = self.p
        out[cols, rows] = self.p
        return out


def _landmarks_for_triangle(size: int) -> int:
    n = int(round((1 + np.sqrt(1 + 8 * size)) / 2))
    if n * (n - 1) // 2 != size:
        raise DimensionMismatchError(f"{size} entries do not form a strict lower triangle")
    return n


def _check_distribution(p: np.ndarray, name: str) -> None:
    if p.size == 0:
        raise NotNormalizedError(f"{name}: empty distribution")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise NotNormalizedError(f"{name}: entries must be finite and nonnegative")
    total = float(p.sum())
    if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
        raise NotNormalizedError(f"{name}: sums to {total!r}, expected 1")


# ============================================================================
# OPERATIONS
# ============================================================================


def correlation_matrix(part: Partition, pair_id: PairId = (0, 1), video_id: str = "") -> CorrelationMatrix:
    """rho[i][j] = 1 iff labels[i] == labels[j]; weight = the partition's CH score."""
    labels = np.asarray(part.labels)
    rho = (labels[:, None] == labels[None, :]).astype(np.uint8)
    return CorrelationMatrix(rho=rho, weight=float(part.ch_score), pair_id=pair_id, k=int(part.k), video_id=video_id)


def is_equivalence_relation(rho: np.ndarray) -> bool:
    """Reflexive, symmetric and transitive 0/1 matrix."""
    r = np.asarray(rho).astype(bool)
    if not np.all(np.diag(r)) or not np.array_equal(r, r.T):
        return False
    reachable = (r.astype(np.int64) @ r.astype(np.int64)) > 0
    return bool(np.all(r[reachable]))


def weight_ceiling(rhos: Iterable[CorrelationMatrix]) -> float:
    """Largest CH weight below the CH_CAP sentinel, or 1.0 when every weight is capped."""
    finite = [r.weight for r in rhos if r.weight < CH_CAP]
    return max(finite) if finite else 1.0


def pair_weight(rho: CorrelationMatrix, weight_mode: WeightMode = "ch", ceiling: float = CH_CAP) -> float:
    """Weight of one matrix with its CH score clipped to ``ceiling``."""
    ch = min(rho.weight, ceiling)
    if weight_mode == "k-times-ch":
        return rho.k * ch
    return ch


def accumulate(
    rhos: Sequence[CorrelationMatrix], weight_mode: WeightMode = "ch", video_id: Optional[str] = None
) -> CoMotionPattern:
    """
    acc = sum of w_t * rho_t, summed in (video_id, pair_id) order.

    Capped CH scores (perfect separations) are clipped to the largest finite
    CH among ``rhos`` before the weight mode is applied.

    Args:
        rhos: Correlation matrices of the frame pairs to pool
        weight_mode: ``ch`` (w = ch_score) or ``k-times-ch`` (w = k * ch_score)
        video_id: Identifier recorded on the pattern; defaults to the first matrix's

    Returns:
        CoMotionPattern with N = len(rhos)
    """
    if len(rhos) == 0:
        raise EmptyInputError("Cannot accumulate an empty list of correlation matrices")
    n = rhos[0].size
    if any(r.size != n for r in rhos):
        raise DimensionMismatchError("Correlation matrices differ in size")

    ordered = sorted(rhos, key=lambda r: (r.video_id, r.pair_id))
    ceiling = weight_ceiling(ordered)
    acc = np.zeros((n, n))
    total = 0.0
    weights = []
    for r in ordered:
        w = pair_weight(r, weight_mode, ceiling)
        acc += w * r.rho
        total += w
        weights.append(w)

    return CoMotionPattern(
        acc=acc,
        total_weight=total,
        pair_count=len(ordered),
        weight_mode=weight_mode,
        video_id=ordered[0].video_id if video_id is None else video_id,
        weights=tuple(weights),
    )


def merge_patterns(a: CoMotionPattern, b: CoMotionPattern) -> CoMotionPattern:
    """
    Combine two partial accumulations of the same weight mode.

    Capped CH scores were clipped within each partial list, so the merge equals a
    single accumulation only when both lists share the same largest finite CH.
    """
    if a.weight_mode != b.weight_mode:
        raise SchemaError(f"Cannot merge patterns with weight modes {a.weight_mode} and {b.weight_mode}")
    if a.acc.shape != b.acc.shape:
        raise DimensionMismatchError(f"Cannot merge patterns of shape {a.acc.shape} and {b.acc.shape}")
    return CoMotionPattern(
        acc=a.acc + b.acc,
        total_weight=a.total_weight + b.total_weight,
        pair_count=a.pair_count + b.pair_count,
        weight_mode=a.weight_mode,
        video_id=a.video_id if a.video_id == b.video_id else "",
        weights=a.weights + b.weights,
    )


def normalize(cp: CoMotionPattern, epsilon: float = 1e-8) -> NormalizedPattern:
    """
    L1-normalize the strict lower triangle of ``cp.acc`` after adding
    ``epsilon * max(acc)`` to every entry.
    """
    if epsilon < 0:
        raise NotNormalizedError(f"epsilon must be >= 0, got {epsilon}")
    if not cp.total_weight > 0:
        raise ZeroWeightError(f"Pattern {cp.video_id or '<unnamed>'} has zero total weight")
    n = cp.acc.shape[0]
    tri = cp.acc[np.tril_indices(n, -1)].astype(np.float64)
    if epsilon > 0:
        tri = tri + epsilon * float(cp.acc.max())
    total = tri.sum()
    if not total > 0:
        raise ZeroWeightError(f"Pattern {cp.video_id or '<unnamed>'} has no off-diagonal mass")
    return NormalizedPattern(p=tri / total, smoothed=epsilon > 0)


def _as_distribution(x: Union[NormalizedPattern, np.ndarray, Sequence[float]], name: str) -> np.ndarray:
    if isinstance(x, NormalizedPattern):
        return x.p
    p = np.asarray(x, dtype=np.float64).reshape(-1)
    _check_distribution(p, name)
    return p


def js_divergence(
    p: Union[NormalizedPattern, np.ndarray, Sequence[float]],
    q: Union[NormalizedPattern, np.ndarray, Sequence[float]],
) -> float:
    """Jensen-Shannon divergence in nats, in [0, ln 2]."""
    a = _as_distribution(p, "p")
    b = _as_distribution(q, "q")
    if a.shape != b.shape:
        raise DimensionMismatchError(f"Distributions differ in size: {a.size} vs {b.size}")
    m = 0.5 * (a + b)
    d = 0.5 * (float(rel_entr(a, m).sum()) + float(rel_entr(b, m).sum()))
    return min(max(d, 0.0), LN2)


# ============================================================================
# INSPECTION
# ============================================================================


def pattern_difference(a: NormalizedPattern, b: NormalizedPattern) -> np.ndarray:
    """a - b laid onto a symmetric landmark x landmark matrix."""
    if a.p.shape != b.p.shape:
        raise DimensionMismatchError(f"Patterns differ in size: {a.p.size} vs {b.p.size}")
    return a.matrix() - b.matrix()


def convergence_curve(
    rhos: Sequence[CorrelationMatrix],
    budgets: Iterable[int],
    reference: Optional[NormalizedPattern] = None,
    config: Optional[PatternConfig] = None,
) -> List[Dict[str, float]]:
    """
    JS divergence between the pattern of the first N matrices and ``reference``
    (by default the pattern of all matrices) for each budget N.
    """
    config = config or PatternConfig()
    if len(rhos) == 0:
        raise EmptyInputError("Cannot build a convergence curve from no correlation matrices")
    ordered = sorted(rhos, key=lambda r: (r.video_id, r.pair_id))
    if reference is None:
        reference = normalize(accumulate(ordered, config.weight_mode), config.epsilon)

    curve = []
    for n in sorted(set(int(b) for b in budgets)):
        if n < 1:
            raise EmptyInputError(f"Budget must be >= 1, got {n}")
        used = ordered[:n]
        pattern = normalize(accumulate(used, config.weight_mode), config.epsilon)
        curve.append({"N": n, "pairs_used": len(used), "js": js_divergence(pattern, reference)})
    return curve


def write_heatmap(matrix: np.ndarray, path: PathLike) -> None:
    """Min-max scaled grayscale PGM; a constant matrix renders black."""
    m = np.asarray(matrix, dtype=np.float64)
    lo, hi = float(m.min()), float(m.max())
    scaled = (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)
    write_gray_image(scaled, path)


# ============================================================================
# PERSISTENCE
# ============================================================================


def sidecar_path(csv_path: PathLike) -> Path:
    return Path(csv_path).with_suffix(".json")


def weight_stats(cp: CoMotionPattern) -> Dict[str, float]:
    w = np.asarray(cp.weights if cp.weights else [cp.total_weight / max(cp.pair_count, 1)])
    return {"min": float(w.min()), "max": float(w.max()), "mean": float(w.mean())}


def write_pattern(cp: CoMotionPattern, csv_path: PathLike, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Write acc / total_weight as a headerless CSV plus a validated JSON sidecar.

    Returns:
        The sidecar document
    """
    csv_path = Path(csv_path)
    np.savetxt(csv_path, cp.mean_matrix(), fmt="%.17g", delimiter=",")
    sidecar = {
        "video_id": cp.video_id or csv_path.stem,
        "N": int(cp.pair_count),
        "total_weight": float(cp.total_weight),
        "weight_mode": cp.weight_mode,
        "weight_stats": weight_stats(cp),
    }
    sidecar.update(extra or {})
    write_artifact("pattern_sidecar", sidecar, sidecar_path(csv_path))
    logger.info(f"✅ Wrote pattern {sidecar['video_id']} (N={cp.pair_count}) to {csv_path}")
    return sidecar


def read_pattern(csv_path: PathLike) -> Tuple[CoMotionPattern, Dict[str, Any]]:
    """Read a pattern CSV and its sidecar; acc is rebuilt as matrix * total_weight."""
    csv_path = Path(csv_path)
    if not csv_path.is_file():
        raise MissingInputError(f"Pattern file not found: {csv_path}")
    sidecar = read_artifact("pattern_sidecar", sidecar_path(csv_path))
    try:
        matrix = np.loadtxt(csv_path, delimiter=",", ndmin=2)
    except ValueError as e:
        raise SchemaError(f"{csv_path.name}: malformed pattern CSV ({e})") from e
    if matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatchError(f"{csv_path.name}: pattern must be square, got shape {matrix.shape}")
    total = float(sidecar["total_weight"])
    pattern = CoMotionPattern(
        acc=matrix * total,
        total_weight=total,
        pair_count=int(sidecar["N"]),
        weight_mode=sidecar["weight_mode"],
        video_id=sidecar["video_id"],
    )
    return pattern, sidecar


def save_rho_archive(rhos: Sequence[CorrelationMatrix], path: PathLike) -> None:
    """Store correlation matrices as a compressed ``.npz`` archive."""
    if len(rhos) == 0:
        raise EmptyInputError("No correlation matrices to archive")
    np.savez_compressed(
        Path(path),
        rho=np.stack([r.rho for r in rhos]).astype(np.uint8),
        weight=np.array([r.weight for r in rhos], dtype=np.float64),
        k=np.array([r.k for r in rhos], dtype=np.int64),
        pair=np.array([r.pair_id for r in rhos], dtype=np.int64).reshape(-1, 2),
        video_id=np.array([r.video_id for r in rhos], dtype=str),
    )


def load_rho_archive(path: PathLike) -> List[CorrelationMatrix]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Correlation archive not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            rho, weight, k, pair, video_id = (data[key] for key in ("rho", "weight", "k", "pair", "video_id"))
    except (KeyError, ValueError, OSError) as e:
        raise SchemaError(f"{path.name}: not a correlation archive ({e})") from e
    return [
        CorrelationMatrix(rho=rho[i], weight=float(weight[i]), pair_id=tuple(pair[i]), k=int(k[i]), video_id=str(video_id[i]))
        for i in range(len(rho))
    ]
