import os, sys
_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if _root not in sys.path:
    sys.path.insert(0, _root)

import numpy as np
import pytest

from src.capture_noise import NoiseConfig
from src.capture_renderer import RenderSettings
from src.sensor_model import Intrinsics, SensorModel, generate_dot_pattern


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-resolution acceptance runs (deselect with -m 'not slow')")


def build_sensor(width=160, height=120, focal=145.0, baseline=0.075, depth_range=(0.4, 8.0),
                 pattern_side=160, projector_focal=116.0, **kwargs) -> SensorModel:
    """Kinect-like device; the defaults are the VGA preset at quarter resolution."""
    camera = Intrinsics(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height,
                        **kwargs.pop("distortion", {}))
    centre = (pattern_side - 1) / 2.0
    projector = Intrinsics(projector_focal, projector_focal, centre, centre, pattern_side, pattern_side)
    pattern = generate_dot_pattern(pattern_side, kwargs.pop("density", 0.1), kwargs.pop("pattern_seed", 7),
                                   kwargs.get("window_size_px", 9))
    return SensorModel(camera, projector, baseline, pattern, depth_range, **kwargs)


def build_vga_sensor(**kwargs) -> SensorModel:
    return build_sensor(640, 480, 580.0, pattern_side=640, projector_focal=464.0, **kwargs)


@pytest.fixture(scope="session")
def small_sensor() -> SensorModel:
    return build_sensor()


@pytest.fixture(scope="session")
def vga_sensor() -> SensorModel:
    return build_vga_sensor()


@pytest.fixture
def sensor_factory():
    return build_sensor


@pytest.fixture
def noiseless():
    return RenderSettings(pixel_jitter=0.0), NoiseConfig.noiseless()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


SMALL_CONFIG = {
    "sensor.camera.width": 160, "sensor.camera.height": 120,
    "sensor.camera.fx": 145.0, "sensor.camera.fy": 145.0,
    "sensor.camera.cx": 79.5, "sensor.camera.cy": 59.5,
    "sensor.pattern_side_px": 160, "sensor.projector_focal_px": 116.0,
    "viewpoints.mode": "random", "viewpoints.count": 3, "viewpoints.radius_range_m": [1.0, 1.5],
    "output.jobs": 1,
}


@pytest.fixture
def small_config_overrides():
    """Dotted overrides turning the default config into the quarter-resolution device."""
    return dict(SMALL_CONFIG)
