#!/usr/bin/env python3
"""
Synthetic Faces

Ground-truth-labeled landmark tracks and rendered frames for exercising the
pipeline without real video.

Real-like motion is articulated: the whole face drifts together, each
anatomical group adds its own coherent offset, and during talking segments the
upper and lower lips move in opposite directions. Fake-like motion keeps every
landmark's motion values but shuffles them in time, independently per landmark,
so the same magnitudes occur without the within-group coherence.

Features:
- Fixed 51-landmark face layout on a 256 x 256 canvas
- Seeded real_like / fake_like motion generation with exact per-pair motion
- Texture rendering deformed by a thin-plate-spline warp of the landmark motion
- Writers for frames, landmark CSV and ground-truth motion CSV
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage
from scipy.interpolate import RBFInterpolator

from comotion_errors import DimensionMismatchError
from flow_io import frame_file_name, to_uint8, write_pgm
from landmark_tracks import LANDMARK_COUNT, LandmarkFrame, LandmarkTrack, write_track
from motion_features import MotionFeatureSet, MotionGateConfig, write_feature_dump
from optical_flow_solver import Frame

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CANVAS_SIZE = 256
GROUP_NAMES = ("brows", "nose", "eyes", "outer_lip", "inner_lip")
LANDMARKS_FILE = "landmarks.csv"
MOTION_FILE = "motion.csv"


# ============================================================================
# FACE LAYOUT
# ============================================================================


def _arc(x0: float, x1: float, y: float, bend: float, count: int) -> np.ndarray:
    x = np.linspace(x0, x1, count)
    t = np.linspace(-1.0, 1.0, count)
    return np.column_stack([x, y - bend * (1.0 - t ** 2)])


def _eye(cx: float, cy: float) -> np.ndarray:
    """Six contour points: outer corner, two upper, inner corner, two lower."""
    angles = np.deg2rad([180.0, 120.0, 60.0, 0.0, 300.0, 240.0])
    return np.column_stack([cx + 13.0 * np.cos(angles), cy - 5.0 * np.sin(angles)])


def _lip_ring(cx: float, cy: float, rx: float, ry: float, count: int) -> np.ndarray:
    """Contour from the left corner over the upper lip to the right corner and back."""
    angles = np.pi - 2.0 * np.pi * np.arange(count) / count
    return np.column_stack([cx + rx * np.cos(angles), cy - ry * np.sin(angles)])


@dataclass(frozen=True)
class FaceModel:
    """Anatomical grouping and rest layout of the 51 landmarks."""

    groups: Tuple[Tuple[int, ...], ...]
    rest_positions: np.ndarray
    lip_pair: Tuple[Tuple[int, ...], Tuple[int, ...]]
    canvas_size: int = CANVAS_SIZE

    def __post_init__(self):
        flat = sorted(i for g in self.groups for i in g)
        if flat != list(range(LANDMARK_COUNT)):
            raise DimensionMismatchError("Face groups must partition the 51 landmark indices")
        rest = np.asarray(self.rest_positions, dtype=np.float64)
        if rest.shape != (LANDMARK_COUNT, 2):
            raise DimensionMismatchError(f"Rest layout must have shape (51, 2), got {rest.shape}")
        object.__setattr__(self, "rest_positions", rest)

    @classmethod
    def default(cls) -> "FaceModel":
        brows = np.vstack([_arc(70, 110, 86, 6, 5), _arc(146, 186, 86, 6, 5)])
        nose = np.vstack(
            [
                np.column_stack([np.full(4, 128.0), np.linspace(102, 136, 4)]),
                np.column_stack([np.linspace(112, 144, 5), 146 - np.array([0.0, 2.0, 3.0, 2.0, 0.0])]),
            ]
        )
        eyes = np.vstack([_eye(95, 110), _eye(161, 110)])
        outer_lip = _lip_ring(128, 180, 30, 13, 12)
        inner_lip = _lip_ring(128, 180, 18, 5, 8)
        rest = np.vstack([brows, nose, eyes, outer_lip, inner_lip])
        return cls(
            groups=(
                tuple(range(0, 10)),
                tuple(range(10, 19)),
                tuple(range(19, 31)),
                tuple(range(31, 43)),
                tuple(range(43, 51)),
            ),
            rest_positions=rest,
            lip_pair=(
                tuple(range(32, 37)) + tuple(range(44, 47)),
                tuple(range(38, 43)) + tuple(range(48, 51)),
            ),
        )

    def group_of(self) -> np.ndarray:
        """Group index of every landmark."""
        out = np.empty(LANDMARK_COUNT, dtype=np.int64)
        for g, members in enumerate(self.groups):
            out[list(members)] = g
        return out


class SynthConfig(BaseModel):
    """Motion generator settings; distances in pixels."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    frames: int = Field(120, ge=2, description="Frames per track")
    mode: Literal["real_like", "fake_like"] = "real_like"
    global_motion_sigma: float = Field(1.5, ge=0, description="Per-frame innovation of the whole-face drift")
    group_motion_sigma: float = Field(0.4, ge=0, description="Per-frame innovation of each group's offset")
    noise_sigma: float = Field(0.05, ge=0, description="I.i.d. landmark jitter")
    motion_persistence: float = Field(0.9, ge=0, lt=1, description="Mean reversion of drift and group offsets")
    talk_probability: float = Field(0.5, ge=0, le=1)
    talk_segment_frames: int = Field(20, gt=0)
    lip_amplitude: float = Field(4.0, ge=0, description="Peak mouth opening")
    lip_period_frames: float = Field(8.0, gt=0)
    fake_decorrelation: float = Field(1.0, ge=0, le=1, description="Probability a motion sample is shuffled")
    fake_block_frames: int = Field(8, ge=2, description="Shuffles stay within blocks of this many pairs")
    margin: float = Field(8.0, ge=0, description="Landmarks stay this far from the canvas border")
    rng_seed: int = Field(0, ge=0)


# ============================================================================
# MOTION
# ============================================================================


def _ar_process(rng: np.random.Generator, steps: int, shape: Tuple[int, ...], sigma: float, phi: float) -> np.ndarray:
    out = np.zeros((steps,) + shape)
    if sigma == 0:
        return out
    innovations = rng.normal(0.0, sigma, size=(steps,) + shape)
    for t in range(1, steps):
        out[t] = phi * out[t - 1] + innovations[t]
    return out


def _mouth_opening(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    segments = -(-cfg.frames // cfg.talk_segment_frames)
    talking = rng.random(segments) < cfg.talk_probability
    state = np.repeat(talking, cfg.talk_segment_frames)[: cfg.frames].astype(np.float64)
    envelope = np.zeros(cfg.frames)
    for t in range(1, cfg.frames):
        envelope[t] = 0.7 * envelope[t - 1] + 0.3 * state[t]
    phase = 2.0 * np.pi * np.arange(cfg.frames) / cfg.lip_period_frames
    return cfg.lip_amplitude * envelope * 0.5 * (1.0 - np.cos(phase))


def _real_positions(model: FaceModel, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    T = cfg.frames
    drift = _ar_process(rng, T, (2,), cfg.global_motion_sigma, cfg.motion_persistence)
    offsets = _ar_process(rng, T, (len(model.groups), 2), cfg.group_motion_sigma, cfg.motion_persistence)
    opening = _mouth_opening(rng, cfg)
    jitter = rng.normal(0.0, cfg.noise_sigma, size=(T, LANDMARK_COUNT, 2)) if cfg.noise_sigma > 0 else 0.0

    positions = model.rest_positions[None, :, :] + drift[:, None, :] + offsets[:, model.group_of(), :]
    upper, lower = (list(s) for s in model.lip_pair)
    positions[:, upper, 1] -= 0.5 * opening[:, None]
    positions[:, lower, 1] += 0.5 * opening[:, None]
    return positions + jitter


def _shuffle_in_time(motions: np.ndarray, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Permute each landmark's selected motion samples within blocks of pairs."""
    shuffled = motions.copy()
    steps = motions.shape[0]
    for start in range(0, steps, cfg.fake_block_frames):
        stop = min(start + cfg.fake_block_frames, steps)
        for i in range(LANDMARK_COUNT):
            chosen = start + np.flatnonzero(rng.random(stop - start) < cfg.fake_decorrelation)
            if len(chosen) > 1:
                shuffled[chosen, i] = motions[rng.permutation(chosen), i]
    return shuffled


def generate_positions(model: FaceModel, cfg: SynthConfig) -> np.ndarray:
    """Landmark positions of every frame, shape (frames, 51, 2)."""
    rng = np.random.default_rng(cfg.rng_seed)
    positions = _real_positions(model, cfg, rng)
    if cfg.mode == "fake_like" and cfg.fake_decorrelation > 0:
        shuffle_rng = np.random.default_rng([cfg.rng_seed, 1])
        motions = _shuffle_in_time(np.diff(positions, axis=0), cfg, shuffle_rng)
        positions = positions[0] + np.concatenate([np.zeros((1, LANDMARK_COUNT, 2)), np.cumsum(motions, axis=0)])
    hi = model.canvas_size - 1 - cfg.margin
    return np.clip(positions, cfg.margin, hi)


def generate_track(
    model: FaceModel, cfg: SynthConfig, video_id: Optional[str] = None, gate: Optional[MotionGateConfig] = None
) -> Tuple[LandmarkTrack, List[MotionFeatureSet]]:
    """
    Seeded synthetic track plus the exact motion of every consecutive frame pair.

    Returns:
        (track, motions) where motions[t] moves frame t onto frame t + 1
    """
    positions = generate_positions(model, cfg)
    video_id = video_id or f"{cfg.mode}_{cfg.rng_seed}"
    track = LandmarkTrack(
        video_id=video_id,
        frames=tuple(LandmarkFrame(t, positions[t]) for t in range(cfg.frames)),
        metadata={"mode": cfg.mode, "rng_seed": cfg.rng_seed},
    )
    motions = [
        MotionFeatureSet.from_vectors((t, t + 1), positions[t + 1] - positions[t], gate)
        for t in range(cfg.frames - 1)
    ]
    passed = sum(m.passes_gate for m in motions)
    logger.debug(f"Track {video_id}: {passed}/{len(motions)} pairs pass the magnitude gate")
    return track, motions


# ============================================================================
# RENDERING
# ============================================================================


def make_texture(seed: int, size: int = CANVAS_SIZE, sigma: float = 2.0) -> np.ndarray:
    """Periodic band-limited noise texture in [0, 1]."""
    rng = np.random.default_rng(seed)
    noise = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=sigma, mode="wrap")
    noise /= max(float(noise.std()), 1e-12)
    return np.clip(0.5 + 0.15 * noise, 0.0, 1.0)


def render_frames(
    track: LandmarkTrack,
    texture_seed: int = 0,
    noise_sigma: float = 0.0,
    canvas_size: int = CANVAS_SIZE,
    texture_sigma: float = 2.0,
) -> List[Frame]:
    """
    Render each frame as the texture pulled along a thin-plate-spline
    interpolation of the landmark displacement since the first frame.

    Args:
        track: Landmark track whose points lie inside the canvas
        texture_seed: Seed of the texture and of the additive noise
        noise_sigma: Std of zero-mean Gaussian noise in 8-bit intensity units
        canvas_size: Side of the square frames
        texture_sigma: Blur of the band-limited texture

    Returns:
        8-bit quantized frames, one per track frame
    """
    track.validate_bounds(canvas_size, canvas_size)
    texture = make_texture(texture_seed, canvas_size, texture_sigma)
    noise_rng = np.random.default_rng([texture_seed, 1])
    rows, cols = np.mgrid[0:canvas_size, 0:canvas_size].astype(np.float64)
    grid = np.column_stack([cols.ravel(), rows.ravel()])
    origin = track.frames[0].points

    frames = []
    for lm in track.frames:
        shift = lm.points - origin
        if np.any(shift != 0.0):
            field = RBFInterpolator(lm.points, shift, kernel="thin_plate_spline", smoothing=1e-6)(grid)
            src_x = (grid[:, 0] - field[:, 0]).reshape(canvas_size, canvas_size)
            src_y = (grid[:, 1] - field[:, 1]).reshape(canvas_size, canvas_size)
            image = ndimage.map_coordinates(texture, [src_y, src_x], order=3, mode="grid-wrap")
        else:
            image = texture.copy()
        if noise_sigma > 0:
            image = image + noise_rng.normal(0.0, noise_sigma / 255.0, size=image.shape)
        frames.append(Frame.from_uint8(to_uint8(image)))
    logger.debug(f"Rendered {len(frames)} frames for {track.video_id}")
    return frames


# ============================================================================
# OUTPUT
# ============================================================================


def write_synthetic_video(
    out_dir: PathLike,
    track: LandmarkTrack,
    motions: Sequence[MotionFeatureSet],
    frames: Optional[Sequence[Frame]] = None,
) -> Dict[str, str]:
    """Write landmark CSV, ground-truth motion CSV and optional PGM frames."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_track(track, out_dir / LANDMARKS_FILE)
    write_feature_dump(motions, out_dir / MOTION_FILE)
    written = {"landmarks": str(out_dir / LANDMARKS_FILE), "motion": str(out_dir / MOTION_FILE)}
    if frames is not None:
        frame_dir = out_dir / "frames"
        frame_dir.mkdir(exist_ok=True)
        for lm, frame in zip(track.frames, frames):
            write_pgm(frame, frame_dir / frame_file_name(lm.frame_index))
        written["frames"] = str(frame_dir)
    logger.info(f"✅ Wrote synthetic video {track.video_id} to {out_dir}")
    return written
