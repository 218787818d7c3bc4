#!/usr/bin/env python3
"""
Local motion features at facial landmarks.

Each of the 51 features is the Gaussian-weighted average of the flow field over
a (2k+1) x (2k+1) window around the landmark. A frame pair passes the magnitude
gate when at least ceil(p * 51) features reach the magnitude threshold; gated
pairs contribute nothing downstream.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from comotion_errors import DimensionMismatchError, MissingInputError, NonFiniteInputError, TrackFormatError
from landmark_tracks import LANDMARK_COUNT, LandmarkFrame
from optical_flow_solver import FlowField

logger = logging.getLogger(__name__)

PairId = Tuple[int, int]
DUMP_COLUMNS = ["pair", "landmark", "u", "v", "magnitude"]


class MotionGateConfig(BaseModel):
    """Window and gate settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    fraction_p: float = Field(0.5, gt=0, le=1)
    magnitude_threshold: float = Field(0.85, gt=0, description="Pixels/frame")
    window_stride_k: int = Field(3, gt=0, description="Window half-width")
    gaussian_sigma: Optional[float] = Field(None, gt=0, description="Defaults to k/2")

    @model_validator(mode="after")
    def _default_sigma(self):
        if self.gaussian_sigma is None:
            object.__setattr__(self, "gaussian_sigma", self.window_stride_k / 2.0)
        return self

    @property
    def required_count(self) -> int:
        return math.ceil(self.fraction_p * LANDMARK_COUNT)


@dataclass(frozen=True)
class MotionFeatureSet:
    """The 51 local motion vectors of one frame pair."""

    pair_id: PairId
    features: np.ndarray
    magnitudes: np.ndarray
    passes_gate: bool

    @classmethod
    def from_vectors(
        cls, pair_id: PairId, features: np.ndarray, cfg: Optional[MotionGateConfig] = None
    ) -> "MotionFeatureSet":
        """Build a feature set from known motion vectors, applying the gate."""
        cfg = cfg or MotionGateConfig()
        vectors = np.asarray(features, dtype=np.float64)
        if vectors.shape != (LANDMARK_COUNT, 2):
            raise DimensionMismatchError(
                f"Expected {LANDMARK_COUNT} two-dimensional features, got shape {vectors.shape}"
            )
        if not np.all(np.isfinite(vectors)):
            raise NonFiniteInputError(f"Pair {pair_id}: non-finite motion features")
        magnitudes = np.hypot(vectors[:, 0], vectors[:, 1])
        return cls(
            pair_id=tuple(pair_id),
            features=vectors,
            magnitudes=magnitudes,
            passes_gate=gate(magnitudes, cfg),
        )


def gate(magnitudes: np.ndarray, cfg: MotionGateConfig) -> bool:
    """True iff at least ceil(p * 51) magnitudes reach the threshold."""
    return int(np.count_nonzero(magnitudes >= cfg.magnitude_threshold)) >= cfg.required_count


def gaussian_window(cfg: MotionGateConfig, offset: Tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """(2k+1)^2 Gaussian weights; ``offset`` is the sub-pixel landmark position relative to the window center."""
    k = cfg.window_stride_k
    steps = np.arange(-k, k + 1, dtype=np.float64)
    dy = steps[:, None] - offset[1]
    dx = steps[None, :] - offset[0]
    return np.exp(-(dx ** 2 + dy ** 2) / (2.0 * cfg.gaussian_sigma ** 2))


def extract_features(
    flow: FlowField, lm: LandmarkFrame, cfg: Optional[MotionGateConfig] = None, pair_id: Optional[PairId] = None
) -> MotionFeatureSet:
    """
    Gaussian-weighted flow averages around each landmark of ``lm``.

    The window is centered on the landmark rounded to the nearest pixel and
    clamped at the flow borders; the Gaussian is centered on the exact
    landmark position.
    """
    cfg = cfg or MotionGateConfig()
    pair_id = pair_id or (lm.frame_index, lm.frame_index + 1)
    k = cfg.window_stride_k
    centers = np.rint(lm.points).astype(np.int64)
    cx, cy = centers[:, 0], centers[:, 1]
    if np.any(cx < 0) or np.any(cx >= flow.width) or np.any(cy < 0) or np.any(cy >= flow.height):
        raise DimensionMismatchError(
            f"Pair {pair_id}: landmarks fall outside the {flow.width}x{flow.height} flow field"
        )

    steps = np.arange(-k, k + 1)
    features = np.empty((LANDMARK_COUNT, 2))
    for i in range(LANDMARK_COUNT):
        rows = np.clip(cy[i] + steps, 0, flow.height - 1)
        cols = np.clip(cx[i] + steps, 0, flow.width - 1)
        offset = (lm.points[i, 0] - cx[i], lm.points[i, 1] - cy[i])
        weights = gaussian_window(cfg, offset)
        total = weights.sum()
        window = np.ix_(rows, cols)
        features[i, 0] = (weights * flow.u[window]).sum() / total
        features[i, 1] = (weights * flow.v[window]).sum() / total

    result = MotionFeatureSet.from_vectors(pair_id, features, cfg)
    logger.debug(
        f"Pair {pair_id}: median magnitude {np.median(result.magnitudes):.3f}, "
        f"gate {'passed' if result.passes_gate else 'failed'}"
    )
    return result


def write_feature_dump(sets: Iterable[MotionFeatureSet], path: Union[str, Path]) -> None:
    """Debug dump as ``pair,landmark,u,v,magnitude`` CSV (pair = first frame index)."""
    records = []
    for s in sets:
        for i in range(LANDMARK_COUNT):
            records.append((s.pair_id[0], i, s.features[i, 0], s.features[i, 1], s.magnitudes[i]))
    pd.DataFrame(records, columns=DUMP_COLUMNS).to_csv(Path(path), index=False, lineterminator="\n")


def read_feature_dump(path: Union[str, Path], cfg: Optional[MotionGateConfig] = None) -> List[MotionFeatureSet]:
    """Read a ``pair,landmark,u,v,magnitude`` CSV back into gated feature sets."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Motion file not found: {path}")
    try:
        table = pd.read_csv(path, float_precision="round_trip", skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise TrackFormatError(f"{path.name}: unreadable CSV ({e})") from e
    if [str(c).strip() for c in table.columns] != DUMP_COLUMNS:
        raise TrackFormatError(
            f"{path.name}: header must be {','.join(DUMP_COLUMNS)}, got {','.join(map(str, table.columns))}"
        )
    table.columns = DUMP_COLUMNS
    try:
        table = table.astype({"pair": np.int64, "landmark": np.int64, "u": np.float64, "v": np.float64})
    except (ValueError, TypeError) as e:
        raise TrackFormatError(f"{path.name}: malformed row ({e})") from e

    sets = []
    for pair, rows in table.groupby("pair", sort=True):
        rows = rows.sort_values("landmark")
        if rows["landmark"].tolist() != list(range(LANDMARK_COUNT)):
            raise DimensionMismatchError(f"Pair {pair}: {len(rows)} features in dump, expected landmarks 0..50")
        vectors = rows[["u", "v"]].to_numpy(dtype=np.float64)
        sets.append(MotionFeatureSet.from_vectors((int(pair), int(pair) + 1), vectors, cfg))
    return sets
