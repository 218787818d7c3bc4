#!/usr/bin/env python3
"""
Variational Optical Flow Solver

Dense optical flow between two grayscale frames, estimated by minimizing

    E(u, v) = sum psi(|I2(x + w) - I1(x)|^2)
            + gamma * sum psi(|grad I2(x + w) - grad I1(x)|^2)
            + alpha * sum psi(|grad u|^2 + |grad v|^2)

with the Charbonnier penalty psi(s^2) = sqrt(s^2 + eps^2), coarse-to-fine over
an image pyramid. Each pyramid level runs a fixed-point scheme: the outer loop
re-warps the second frame and re-linearizes the constancy terms, the inner loop
refreshes the robust weights and relaxes the resulting sparse linear system with
red-black successive over-relaxation.

Features:
- Brightness and gradient constancy data terms
- Robust (Charbonnier) data and smoothness penalties
- Energy bookkeeping per pyramid level; a level never ends above its warm start
- Bilinear warping with border clamping
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage

from comotion_errors import DimensionMismatchError, NonFiniteInputError

logger = logging.getLogger(__name__)

_CENTRAL_DIFF = np.array([-0.5, 0.0, 0.5])
_BINOMIAL_5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


# ============================================================================
# DOMAIN TYPES
# ============================================================================


@dataclass(frozen=True)
class Frame:
    """Grayscale frame, row-major ``(height, width)`` intensities in [0, 1]."""

    intensity: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.intensity, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionMismatchError(
                f"Frame intensity must be a 2-D grid, got shape {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise NonFiniteInputError("Frame contains non-finite intensities")
        object.__setattr__(self, "intensity", data)

    @property
    def height(self) -> int:
        return self.intensity.shape[0]

    @property
    def width(self) -> int:
        return self.intensity.shape[1]

    @classmethod
    def from_uint8(cls, pixels: np.ndarray) -> "Frame":
        """Map 8-bit grayscale pixels to [0, 1]."""
        return cls(np.asarray(pixels, dtype=np.float64) / 255.0)


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement (u = dx, v = dy) in pixels/frame."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise DimensionMismatchError(
                f"Flow components must be 2-D grids of equal shape, got {u.shape} and {v.shape}"
            )
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise NonFiniteInputError("Flow field contains non-finite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def uniform(cls, height: int, width: int, dx: float, dy: float) -> "FlowField":
        return cls(np.full((height, width), float(dx)), np.full((height, width), float(dy)))

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    def scaled(self, factor: float) -> "FlowField":
        return FlowField(self.u * factor, self.v * factor)

    def endpoint_error(self, dx, dy) -> np.ndarray:
        """Per-pixel Euclidean distance to a reference displacement (scalars or grids)."""
        return np.hypot(self.u - dx, self.v - dy)


class FlowSolverConfig(BaseModel):
    """Settings of the variational solver."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(1.0, gt=0, description="Smoothness weight")
    psi_epsilon: float = Field(1e-3, gt=0, description="Charbonnier regularizer")
    gradient_weight: float = Field(1.0, ge=0, description="Gradient-constancy weight")
    pyramid_factor: float = Field(0.5, gt=0, lt=1, description="Downsampling ratio per level")
    pyramid_min_size: int = Field(16, gt=0, description="Smallest side of the coarsest level")
    outer_iterations: int = Field(5, gt=0, description="Warping iterations per level")
    inner_iterations: int = Field(30, gt=0, description="Relaxation sweeps per warp")
    sor_omega: float = Field(1.8, gt=0, lt=2, description="Over-relaxation factor")
    intensity_scale: float = Field(
        25.5, gt=0, description="Data terms are evaluated on intensity * scale"
    )


@dataclass
class LevelReport:
    """Energy bookkeeping of one pyramid level."""

    shape: Tuple[int, int]
    energy_initial: float
    energy_final: float
    accepted: bool


@dataclass
class FlowDiagnostics:
    levels: List[LevelReport] = field(default_factory=list)


# ============================================================================
# IMAGE OPERATORS
# ============================================================================


def _gradients(image: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Central differences with border replication."""
    gx = ndimage.correlate1d(image, _CENTRAL_DIFF, axis=1, mode="nearest")
    gy = ndimage.correlate1d(image, _CENTRAL_DIFF, axis=0, mode="nearest")
    return gx, gy


def _blur(image: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(image, _BINOMIAL_5, axis=1, mode="nearest")
    return ndimage.correlate1d(out, _BINOMIAL_5, axis=0, mode="nearest")


def _resample(image: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Bilinear resampling with pixel-center alignment."""
    src_h, src_w = image.shape
    dst_h, dst_w = shape
    ys = (np.arange(dst_h) + 0.5) * (src_h / dst_h) - 0.5
    xs = (np.arange(dst_w) + 0.5) * (src_w / dst_w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(image, [yy, xx], order=1, mode="nearest")


def _warp_array(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample ``image`` at (x + u, y + v); out-of-bounds samples clamp to the border."""
    h, w = image.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return ndimage.map_coordinates(image, [yy + v, xx + u], order=1, mode="nearest")


def warp(b: Frame, f: FlowField) -> Frame:
    """Backward-warp frame ``b`` by flow ``f``: out(x, y) = b(x + u, y + v)."""
    if (b.height, b.width) != (f.height, f.width):
        raise DimensionMismatchError(
            f"Frame is {b.width}x{b.height} but flow is {f.width}x{f.height}"
        )
    return Frame(_warp_array(b.intensity, f.u, f.v))


def _pyramid_shapes(height: int, width: int, cfg: FlowSolverConfig) -> List[Tuple[int, int]]:
    """Level shapes from finest to coarsest."""
    shapes = [(height, width)]
    level = 1
    while True:
        scale = cfg.pyramid_factor ** level
        shape = (int(round(height * scale)), int(round(width * scale)))
        if min(shape) < cfg.pyramid_min_size or shape == shapes[-1]:
            break
        shapes.append(shape)
        level += 1
    return shapes


def _build_pyramid(image: np.ndarray, shapes: List[Tuple[int, int]]) -> List[np.ndarray]:
    levels = [image]
    for shape in shapes[1:]:
        levels.append(_resample(_blur(levels[-1]), shape))
    return levels


# ============================================================================
# ENERGY
# ============================================================================


def _forward_differences(field_: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    dx = np.diff(field_, axis=1, append=field_[:, -1:])
    dy = np.diff(field_, axis=0, append=field_[-1:, :])
    return dx, dy


def flow_energy(
    i1: np.ndarray, i2: np.ndarray, u: np.ndarray, v: np.ndarray, cfg: FlowSolverConfig
) -> float:
    """Discretized total energy of (u, v) for already-scaled intensity grids."""
    eps2 = cfg.psi_epsilon ** 2
    gx1, gy1 = _gradients(i1)
    gx2, gy2 = _gradients(i2)

    residual = _warp_array(i2, u, v) - i1
    data = np.sqrt(residual ** 2 + eps2).sum()

    rx = _warp_array(gx2, u, v) - gx1
    ry = _warp_array(gy2, u, v) - gy1
    gradient = np.sqrt(rx ** 2 + ry ** 2 + eps2).sum()

    ux, uy = _forward_differences(u)
    vx, vy = _forward_differences(v)
    smooth = np.sqrt(ux ** 2 + uy ** 2 + vx ** 2 + vy ** 2 + eps2).sum()

    return float(data + cfg.gradient_weight * gradient + cfg.alpha * smooth)


# ============================================================================
# FIXED-POINT SOLVER
# ============================================================================


def _neighbor_sum(values: np.ndarray, wx: np.ndarray, wy: np.ndarray) -> np.ndarray:
    """Weighted sum over the 4-neighborhood; missing neighbors contribute nothing."""
    out = np.zeros_like(values)
    out[:, :-1] += wx * values[:, 1:]
    out[:, 1:] += wx * values[:, :-1]
    out[:-1, :] += wy * values[1:, :]
    out[1:, :] += wy * values[:-1, :]
    return out


def _solve_level(
    i1: np.ndarray,
    i2: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    cfg: FlowSolverConfig,
) -> Tuple[np.ndarray, np.ndarray]:
    eps2 = cfg.psi_epsilon ** 2
    gamma = cfg.gradient_weight
    omega = cfg.sor_omega
    h, w = i1.shape

    gx1, gy1 = _gradients(i1)
    gx2, gy2 = _gradients(i2)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    colors = [((yy + xx) % 2) == 0, ((yy + xx) % 2) == 1]

    u = u.copy()
    v = v.copy()
    for _ in range(cfg.outer_iterations):
        i2w = _warp_array(i2, u, v)
        gx2w = _warp_array(gx2, u, v)
        gy2w = _warp_array(gy2, u, v)

        ix = 0.5 * (gx1 + gx2w)
        iy = 0.5 * (gy1 + gy2w)
        iz = i2w - i1
        ixx, ixy = _gradients(ix)
        _, iyy = _gradients(iy)
        ixz = gx2w - gx1
        iyz = gy2w - gy1

        du = np.zeros_like(u)
        dv = np.zeros_like(v)
        for _ in range(cfg.inner_iterations):
            # Robust weights, lagged from the current increment
            rz = iz + ix * du + iy * dv
            psi_data = 0.5 / np.sqrt(rz ** 2 + eps2)
            rx = ixz + ixx * du + ixy * dv
            ry = iyz + ixy * du + iyy * dv
            psi_grad = gamma * 0.5 / np.sqrt(rx ** 2 + ry ** 2 + eps2)

            ux, uy = _forward_differences(u + du)
            vx, vy = _forward_differences(v + dv)
            psi_smooth = cfg.alpha * 0.5 / np.sqrt(ux ** 2 + uy ** 2 + vx ** 2 + vy ** 2 + eps2)
            wx = 0.5 * (psi_smooth[:, :-1] + psi_smooth[:, 1:])
            wy = 0.5 * (psi_smooth[:-1, :] + psi_smooth[1:, :])
            wsum = _neighbor_sum(np.ones_like(u), wx, wy)

            a11 = psi_data * ix * ix + psi_grad * (ixx * ixx + ixy * ixy)
            a12 = psi_data * ix * iy + psi_grad * (ixx * ixy + ixy * iyy)
            a22 = psi_data * iy * iy + psi_grad * (ixy * ixy + iyy * iyy)
            b1 = psi_data * ix * iz + psi_grad * (ixx * ixz + ixy * iyz)
            b2 = psi_data * iy * iz + psi_grad * (ixy * ixz + iyy * iyz)

            for mask in colors:
                target = (_neighbor_sum(u + du, wx, wy) - wsum * u - a12 * dv - b1) / (wsum + a11)
                du[mask] = (1.0 - omega) * du[mask] + omega * target[mask]
                target = (_neighbor_sum(v + dv, wx, wy) - wsum * v - a12 * du - b2) / (wsum + a22)
                dv[mask] = (1.0 - omega) * dv[mask] + omega * target[mask]

        u = u + du
        v = v + dv
    return u, v


def estimate_flow_with_diagnostics(
    a: Frame, b: Frame, cfg: Optional[FlowSolverConfig] = None
) -> Tuple[FlowField, FlowDiagnostics]:
    """
    Estimate the flow from ``a`` to ``b`` such that a(x) ~ b(x + w(x)).

    Returns the flow together with per-level energy reports (finest level first).
    """
    cfg = cfg or FlowSolverConfig()
    if a.intensity.shape != b.intensity.shape:
        raise DimensionMismatchError(
            f"Frames differ in size: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    if min(a.height, a.width) < cfg.pyramid_min_size:
        raise DimensionMismatchError(
            f"Frames of {a.width}x{a.height} are smaller than pyramid_min_size={cfg.pyramid_min_size}"
        )
    if not (np.all(np.isfinite(a.intensity)) and np.all(np.isfinite(b.intensity))):
        raise NonFiniteInputError("Frames contain non-finite intensities")

    shapes = _pyramid_shapes(a.height, a.width, cfg)
    pyr1 = _build_pyramid(a.intensity * cfg.intensity_scale, shapes)
    pyr2 = _build_pyramid(b.intensity * cfg.intensity_scale, shapes)

    diagnostics = FlowDiagnostics()
    u = np.zeros(shapes[-1])
    v = np.zeros(shapes[-1])
    for level in range(len(shapes) - 1, -1, -1):
        shape = shapes[level]
        if u.shape != shape:
            sy = shape[0] / u.shape[0]
            sx = shape[1] / u.shape[1]
            u = _resample(u, shape) * sx
            v = _resample(v, shape) * sy

        i1, i2 = pyr1[level], pyr2[level]
        energy_initial = flow_energy(i1, i2, u, v, cfg)
        u_new, v_new = _solve_level(i1, i2, u, v, cfg)
        energy_final = flow_energy(i1, i2, u_new, v_new, cfg)

        accepted = energy_final <= energy_initial
        if accepted:
            u, v = u_new, v_new
        else:
            logger.warning(
                f"⚠️  Level {shape[1]}x{shape[0]} raised the energy "
                f"({energy_initial:.4g} -> {energy_final:.4g}); keeping warm start"
            )
            energy_final = energy_initial
        diagnostics.levels.insert(
            0, LevelReport(shape, energy_initial, energy_final, accepted)
        )
        logger.debug(
            f"Level {shape[1]}x{shape[0]}: energy {energy_initial:.6g} -> {energy_final:.6g}"
        )

    return FlowField(u, v), diagnostics


def estimate_flow(a: Frame, b: Frame, cfg: Optional[FlowSolverConfig] = None) -> FlowField:
    """Dense flow from ``a`` to ``b`` (see ``estimate_flow_with_diagnostics``)."""
    flow, _ = estimate_flow_with_diagnostics(a, b, cfg)
    return flow
