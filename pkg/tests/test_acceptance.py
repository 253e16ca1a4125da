"""End-to-end behaviour of the simulated device on flat walls and a single occluder."""
from dataclasses import replace

import numpy as np
import pytest

from src.accel import build_accelerator
from src.benchmark import BenchmarkSettings, evaluate_depth, quantization_step_mm, run_flat_wall, wall_scene
from src.capture_noise import NoiseConfig
from src.capture_renderer import RenderSettings, render_capture
from src.geometry import Pose
from src.pipeline import run_frame
from src.scene import Instance, Material, Scene, make_plane
from src.sensor_model import Pattern
from src.stereo_matcher import MatchSettings, representable_depths

NOISELESS = BenchmarkSettings(render=RenderSettings(pixel_jitter=0.0), noise=NoiseConfig.noiseless())


@pytest.mark.slow
def test_noiseless_wall_error_stays_below_one_depth_step(vga_sensor):
    report = run_flat_wall(vga_sensor, [1.0], [0.0], 1, NOISELESS)
    rec = report.records[0]
    assert rec.valid_fraction > 0.95
    assert rec.std_error_mm < quantization_step_mm(vga_sensor, 1.0)
    assert abs(rec.mean_error_mm) < quantization_step_mm(vga_sensor, 1.0)


@pytest.mark.slow
def test_error_grows_with_distance(vga_sensor):
    report = run_flat_wall(vga_sensor, [1.0, 2.0, 3.0, 4.0], [0.0], 5, BenchmarkSettings(base_seed=1, jobs=4))
    by_distance = report.mean_std_by("distance_m")
    stds = [by_distance[d] for d in (1.0, 2.0, 3.0, 4.0)]
    assert stds == sorted(stds)
    assert 3.0 <= by_distance[4.0] / by_distance[2.0] <= 6.0


@pytest.mark.slow
def test_steep_tilt_loses_most_pixels(vga_sensor):
    report = run_flat_wall(vga_sensor, [2.0], [0.0, 80.0], 1, BenchmarkSettings(base_seed=2))
    valid = report.mean_valid_by("tilt_deg")
    assert valid[80.0] < 0.5
    assert valid[80.0] < 0.5 * valid[0.0]


@pytest.mark.slow
def test_wall_beyond_max_range_is_almost_entirely_invalid(vga_sensor):
    z = vga_sensor.depth_range_m[1] + 1.0
    frame = run_frame(build_accelerator(wall_scene(z, 0.0)), vga_sensor, Pose.identity(),
                      render=RenderSettings(seed=4), noise=NoiseConfig(seed=4), match=MatchSettings(), post=None)
    assert evaluate_depth(vga_sensor, frame.depth, z, 0.0, 0).valid_fraction <= 0.005


@pytest.mark.slow
def test_noisy_depths_stay_on_the_representable_grid(vga_sensor):
    scene = Scene((Instance(make_plane(40.0, 40.0), Pose.from_euler((0, 25.0, 0), (0, 0, 2.0)), Material()),))
    frame = run_frame(build_accelerator(scene), vga_sensor, Pose.identity(), render=RenderSettings(seed=1),
                      noise=NoiseConfig(seed=1), match=MatchSettings(), post=None)
    values = frame.depth.values[frame.depth.valid]
    assert values.size > 0
    grid = representable_depths(vga_sensor)
    idx = np.clip(np.searchsorted(grid, values), 1, len(grid) - 1)
    nearest = np.minimum(np.abs(values - grid[idx - 1]), np.abs(values - grid[idx]))
    assert nearest.max() < 1e-9


@pytest.mark.slow
def test_lens_distortion_grows_error_towards_the_edges(vga_sensor):
    distorted = vga_sensor.with_camera(replace(vga_sensor.camera, k1=-0.02))
    report = run_flat_wall(distorted, [2.0], [0.0], 3, BenchmarkSettings(base_seed=5, jobs=4))
    profile = report.radial_profile(distance_m=2.0)
    inner, outer = np.nanmean(profile[:3]), np.nanmean(profile[5:8])
    assert np.isfinite(inner) and np.isfinite(outer)
    assert outer >= inner


def test_saturating_ambient_light_leaves_holes(small_sensor):
    settings = replace(NOISELESS, ambient_light=2.0)
    report = run_flat_wall(small_sensor, [1.5], [0.0], 1, settings)
    assert report.records[0].valid_fraction == 0.0


# ── Occlusion shadow ──────────────────────────────────────────────────────────
# Occluder: 0.4 m square at 0.8 m with its right edge at x = 0.2 m; wall at 2 m.
# The projector sits 0.075 m to the left, so the shadow band falls right of the
# occluder and is f·b·(1/0.8 − 1/2) = 32.6 px wide.

SHADOW_PX = 580.0 * 0.075 * (1.0 / 0.8 - 1.0 / 2.0)
EDGE_U = 319.5 + 580.0 * 0.2 / 0.8


def occluder_scene():
    occluder = Instance(make_plane(0.4, 0.4), Pose.from_euler((0, 0, 0), (0.0, 0.0, 0.8)), Material(albedo=0.8))
    wall = Instance(make_plane(40.0, 40.0), Pose.from_euler((0, 0, 0), (0.0, 0.0, 2.0)), Material(albedo=0.8))
    return Scene((occluder, wall))


@pytest.mark.slow
def test_shadow_band_in_ideal_render(vga_sensor):
    flood = replace(vga_sensor, pattern=Pattern(np.ones((640, 640))))
    cap = render_capture(build_accelerator(occluder_scene()), flood, Pose.identity(),
                         settings=RenderSettings(pixel_jitter=0.0))
    start = int(np.ceil(EDGE_U))
    rows = cap.intensities[150:330, start:start + 70]
    widths = (rows == 0.0).sum(axis=1)
    assert np.median(widths) == pytest.approx(SHADOW_PX, rel=0.3)
    assert np.all(cap.intensities[240, start - 20:start - 1] > 0.0)


@pytest.mark.slow
def test_shadow_band_in_reconstructed_depth(vga_sensor):
    frame = run_frame(build_accelerator(occluder_scene()), vga_sensor, Pose.identity(),
                      render=RenderSettings(pixel_jitter=0.0), noise=NoiseConfig.noiseless(),
                      match=MatchSettings(), post=None)
    start = int(np.ceil(EDGE_U))
    band = ~frame.raw_depth.valid[150:330, start:start + 65]
    widths = band.sum(axis=1)
    assert np.median(widths) == pytest.approx(SHADOW_PX, rel=0.3)
    # the occluder and the lit wall beyond the band both reconstruct
    assert frame.raw_depth.valid[150:330, 380:440].mean() > 0.8
    assert frame.raw_depth.valid[150:330, 540:600].mean() > 0.8
