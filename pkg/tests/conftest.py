"""
Pytest configuration and fixtures for the co-motion test suite.

This module provides shared fixtures (textures, synthetic tracks, acceptance
thresholds) and registers the suite's markers.
"""

import json
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from landmark_tracks import LANDMARK_COUNT, LandmarkFrame, LandmarkTrack
from optical_flow_solver import Frame
from synthetic_faces import FaceModel


def band_limited_texture(seed: int, size: int = 64, sigma: float = 2.0) -> np.ndarray:
    """Periodic smooth noise in [0, 1]."""
    rng = np.random.default_rng(seed)
    noise = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=sigma, mode="wrap")
    return np.clip(0.5 + 0.15 * noise / noise.std(), 0.0, 1.0)


def shifted(image: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Periodic sub-pixel shift: out(x) = image(x - d)."""
    spectrum = ndimage.fourier_shift(np.fft.fft2(image), shift=(dy, dx))
    return np.real(np.fft.ifft2(spectrum))


def shifted_pair(seed: int, dx: float, dy: float, size: int = 64):
    """Two frames whose true flow is the constant (dx, dy)."""
    a = band_limited_texture(seed, size)
    return Frame(a), Frame(shifted(a, dx, dy))


def translated_track(offsets, video_id: str = "translated") -> LandmarkTrack:
    """Default face layout moved by one (dx, dy) offset per frame."""
    rest = FaceModel.default().rest_positions
    return LandmarkTrack(
        video_id=video_id,
        frames=tuple(LandmarkFrame(t, rest + np.asarray(o, dtype=np.float64)) for t, o in enumerate(offsets)),
    )


@pytest.fixture
def face_model():
    return FaceModel.default()


@pytest.fixture
def rest_points():
    """51 landmark positions of the default layout."""
    points = FaceModel.default().rest_positions
    assert points.shape == (LANDMARK_COUNT, 2)
    return points


@pytest.fixture
def texture_pair():
    return shifted_pair(seed=7, dx=1.0, dy=-0.5)


@pytest.fixture
def test_config():
    """Load acceptance thresholds."""
    config_path = Path(__file__).parent / "test_config.json"
    with open(config_path, "r") as f:
        return json.load(f)


def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line("markers", "flow: optical flow estimation and flow/frame files")
    config.addinivalue_line("markers", "tracks: landmark track ingestion and motion features")
    config.addinivalue_line("markers", "grouping: spectral grouping and cluster validity")
    config.addinivalue_line("markers", "pattern: correlation matrices, patterns and divergences")
    config.addinivalue_line("markers", "detect: templates, ROC analysis and boosting")
    config.addinivalue_line("markers", "synth: synthetic tracks and rendering")
    config.addinivalue_line("markers", "cli: configuration, pipeline and command line")
    config.addinivalue_line("markers", "slow: long-running acceptance checks")


def pytest_collection_modifyitems(config, items):
    """Modify test collection to add markers automatically."""
    for item in items:
        if "test_optical_flow" in item.nodeid:
            item.add_marker(pytest.mark.flow)
        elif "test_landmark_tracks" in item.nodeid or "test_motion_features" in item.nodeid:
            item.add_marker(pytest.mark.tracks)
        elif "test_motion_grouping" in item.nodeid:
            item.add_marker(pytest.mark.grouping)
        elif "test_comotion_pattern" in item.nodeid:
            item.add_marker(pytest.mark.pattern)
        elif "test_authenticity_detector" in item.nodeid:
            item.add_marker(pytest.mark.detect)
        elif "test_synthetic_faces" in item.nodeid:
            item.add_marker(pytest.mark.synth)
        elif any(name in item.nodeid for name in ("test_pipeline_config", "test_comotion_cli", "test_benchmark")):
            item.add_marker(pytest.mark.cli)
