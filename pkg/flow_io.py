#!/usr/bin/env python3
"""
Frame and flow file I/O.

- Middlebury ``.flo``: float32 magic 202021.25, int32 width, int32 height, then
  row-major interleaved float32 (u, v) pairs, all little-endian.
- PGM (binary P5, 8-bit) grayscale frames via Pillow.
"""

import logging
import re
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from comotion_errors import FlowFormatError, FrameFormatError, MissingInputError
from optical_flow_solver import FlowField, Frame

logger = logging.getLogger(__name__)

FLO_MAGIC = 202021.25
_FLO_HEADER_BYTES = 12

PathLike = Union[str, Path]


def write_flo(f: FlowField, path: PathLike) -> None:
    """Write ``f`` in Middlebury format."""
    path = Path(path)
    header = np.array([FLO_MAGIC], dtype="<f4").tobytes()
    header += np.array([f.width, f.height], dtype="<i4").tobytes()
    body = np.stack([f.u, f.v], axis=-1).astype("<f4").tobytes()
    path.write_bytes(header + body)


def read_flo(path: PathLike) -> FlowField:
    """Read a Middlebury ``.flo`` file."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Flow file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _FLO_HEADER_BYTES:
        raise FlowFormatError(f"{path.name}: truncated header ({len(raw)} bytes)")

    magic = float(np.frombuffer(raw[:4], dtype="<f4")[0])
    if magic != FLO_MAGIC:
        raise FlowFormatError(f"{path.name}: bad magic {magic!r}, expected {FLO_MAGIC}")
    width, height = (int(x) for x in np.frombuffer(raw[4:12], dtype="<i4"))
    if width <= 0 or height <= 0:
        raise FlowFormatError(f"{path.name}: invalid size {width}x{height}")

    expected = _FLO_HEADER_BYTES + 8 * width * height
    if len(raw) < expected:
        raise FlowFormatError(
            f"{path.name}: truncated body ({len(raw)} of {expected} bytes)"
        )
    data = np.frombuffer(raw[_FLO_HEADER_BYTES:expected], dtype="<f4").reshape(height, width, 2)
    return FlowField(data[..., 0].astype(np.float64), data[..., 1].astype(np.float64))


def read_pgm(path: PathLike) -> Frame:
    """Read an 8-bit grayscale PGM frame and map it to [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Frame not found: {path}")
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise FrameFormatError(f"{path.name}: expected 8-bit grayscale, got mode {img.mode}")
            pixels = np.asarray(img, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise FrameFormatError(f"{path.name}: unreadable frame ({e})") from e
    return Frame.from_uint8(pixels)


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def write_gray_image(values: np.ndarray, path: PathLike) -> None:
    """Write a [0, 1] grid as binary PGM."""
    Image.fromarray(to_uint8(values)).save(Path(path), format="PPM")


def write_pgm(frame: Frame, path: PathLike) -> None:
    write_gray_image(frame.intensity, path)


_INDEX_PATTERN = re.compile(r"(\d+)")


def list_indexed_files(directory: PathLike, suffix: str) -> List[Tuple[int, Path]]:
    """
    Files named with a zero-padded index (e.g. ``frame_00012.pgm``), sorted by
    that index. The last digit run of the stem is the index.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingInputError(f"Directory not found: {directory}")
    indexed = []
    for path in directory.glob(f"*{suffix}"):
        digits = _INDEX_PATTERN.findall(path.stem)
        if not digits:
            logger.warning(f"⚠️  Skipping {path.name}: no frame index in name")
            continue
        indexed.append((int(digits[-1]), path))
    indexed.sort(key=lambda item: item[0])
    return indexed


def frame_file_name(index: int) -> str:
    return f"frame_{index:05d}.pgm"


def flow_file_name(index: int) -> str:
    """Flow from frame ``index`` to ``index + 1``."""
    return f"flow_{index:05d}.flo"
