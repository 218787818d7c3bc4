#!/usr/bin/env python3
"""
Landmark Tracks

Ingests per-frame facial landmark tracks produced by an external detector and
aligns them to the 51 non-boundary landmarks.

CSV layout: header ``frame,landmark,x,y``; rows may appear in any order. With
68-point input, landmarks 0-16 (face boundary) are dropped and 17-67 are
renumbered to 0-50. Frames missing any landmark are discarded and counted.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from comotion_errors import (
    DimensionMismatchError,
    EmptyTrackError,
    MissingInputError,
    TrackFormatError,
    TrackInconsistentError,
)

logger = logging.getLogger(__name__)

LANDMARK_COUNT = 51
BOUNDARY_LANDMARKS = 17
CSV_COLUMNS = ["frame", "landmark", "x", "y"]


@dataclass(frozen=True)
class LandmarkFrame:
    """51 ordered (x, y) landmark coordinates of one frame."""

    frame_index: int
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (LANDMARK_COUNT, 2):
            raise DimensionMismatchError(
                f"Frame {self.frame_index}: expected {LANDMARK_COUNT} points, got shape {pts.shape}"
            )
        if not np.all(np.isfinite(pts)):
            raise TrackFormatError(f"Frame {self.frame_index}: non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def within_bounds(self, width: int, height: int) -> bool:
        x, y = self.points[:, 0], self.points[:, 1]
        return bool(np.all((x >= 0) & (x <= width - 1) & (y >= 0) & (y <= height - 1)))


@dataclass(frozen=True)
class LandmarkTrack:
    """Frames of one video ordered by strictly increasing ``frame_index``."""

    video_id: str
    frames: Tuple[LandmarkFrame, ...]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        frames = tuple(self.frames)
        indices = [f.frame_index for f in frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise TrackInconsistentError(
                f"Track {self.video_id}: frame indices must be strictly increasing"
            )
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def frame(self, frame_index: int) -> LandmarkFrame:
        for f in self.frames:
            if f.frame_index == frame_index:
                return f
        raise KeyError(frame_index)

    def by_index(self) -> Dict[int, LandmarkFrame]:
        return {f.frame_index: f for f in self.frames}

    def validate_bounds(self, width: int, height: int) -> None:
        """Raise if any landmark falls outside a ``width`` x ``height`` frame."""
        for f in self.frames:
            if not f.within_bounds(width, height):
                raise DimensionMismatchError(
                    f"Track {self.video_id}: frame {f.frame_index} has landmarks outside {width}x{height}"
                )


def read_track(
    path: Union[str, Path],
    landmark_count_in_file: int = 68,
    video_id: Optional[str] = None,
) -> LandmarkTrack:
    """
    Read a landmark CSV into a 51-point track.

    Args:
        path: CSV with header ``frame,landmark,x,y``
        landmark_count_in_file: 68 (standard detector output) or 51
        video_id: Track identifier; defaults to the file stem

    Returns:
        LandmarkTrack whose metadata records ``frames_dropped`` and
        ``source_landmarks``.
    """
    if landmark_count_in_file not in (51, 68):
        raise TrackFormatError(f"landmark_count_in_file must be 51 or 68, got {landmark_count_in_file}")
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Landmark file not found: {path}")
    video_id = video_id or path.stem

    try:
        table = pd.read_csv(path, dtype=str, encoding="utf-8", skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise TrackFormatError(f"{path.name}: unreadable CSV ({e})") from e

    if [c.strip() for c in table.columns] != CSV_COLUMNS:
        raise TrackFormatError(
            f"{path.name}: header must be {','.join(CSV_COLUMNS)}, got {','.join(table.columns)}"
        )
    table.columns = CSV_COLUMNS
    if table.isna().any().any():
        bad = int(table.isna().any(axis=1).to_numpy().nonzero()[0][0]) + 2
        raise TrackFormatError(f"{path.name}: malformed row at line {bad}")

    try:
        frames_col = table["frame"].str.strip().astype(np.int64).to_numpy()
        landmark_col = table["landmark"].str.strip().astype(np.int64).to_numpy()
        xs = table["x"].str.strip().astype(np.float64).to_numpy()
        ys = table["y"].str.strip().astype(np.float64).to_numpy()
    except ValueError as e:
        raise TrackFormatError(f"{path.name}: malformed row ({e})") from e

    if np.any(landmark_col < 0) or np.any(landmark_col >= landmark_count_in_file):
        raise TrackFormatError(
            f"{path.name}: landmark index outside 0..{landmark_count_in_file - 1}"
        )
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise TrackFormatError(f"{path.name}: non-finite coordinate")

    frame_indices = np.unique(frames_col)
    if landmark_count_in_file == 68:
        keep = landmark_col >= BOUNDARY_LANDMARKS
        frames_col, landmark_col = frames_col[keep], landmark_col[keep] - BOUNDARY_LANDMARKS
        xs, ys = xs[keep], ys[keep]

    frames: List[LandmarkFrame] = []
    dropped = 0
    # Frames listing only boundary points still count as dropped
    for frame_index in frame_indices:
        rows = frames_col == frame_index
        ids = landmark_col[rows]
        if len(np.unique(ids)) != len(ids) or len(ids) > LANDMARK_COUNT:
            raise TrackInconsistentError(
                f"{path.name}: frame {frame_index} lists {len(ids)} rows for "
                f"{len(np.unique(ids))} distinct landmarks"
            )
        if len(ids) < LANDMARK_COUNT:
            dropped += 1
            continue
        points = np.empty((LANDMARK_COUNT, 2))
        points[ids, 0] = xs[rows]
        points[ids, 1] = ys[rows]
        frames.append(LandmarkFrame(int(frame_index), points))

    if not frames:
        raise EmptyTrackError(f"{path.name}: no complete frames")
    if dropped:
        logger.warning(f"⚠️  {path.name}: dropped {dropped} incomplete frame(s)")
    logger.info(f"✅ Loaded track {video_id}: {len(frames)} frames")

    return LandmarkTrack(
        video_id=video_id,
        frames=tuple(frames),
        metadata={"frames_dropped": dropped, "source_landmarks": landmark_count_in_file},
    )


def write_track(track: LandmarkTrack, path: Union[str, Path]) -> None:
    """Write a 51-point track as ``frame,landmark,x,y`` CSV."""
    n = len(track.frames)
    table = pd.DataFrame(
        {
            "frame": np.repeat([f.frame_index for f in track.frames], LANDMARK_COUNT),
            "landmark": np.tile(np.arange(LANDMARK_COUNT), n),
            "x": np.concatenate([f.points[:, 0] for f in track.frames]) if n else [],
            "y": np.concatenate([f.points[:, 1] for f in track.frames]) if n else [],
        },
        columns=CSV_COLUMNS,
    )
    table.to_csv(Path(path), index=False, lineterminator="\n")


def frame_pairs(track: LandmarkTrack) -> List[Tuple[int, int]]:
    """Consecutive (t, t+1) index pairs present in the track; gaps produce no pair."""
    indices = [f.frame_index for f in track.frames]
    return [(a, b) for a, b in zip(indices, indices[1:]) if b == a + 1]
