import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.accel import build_accelerator
from src.capture_noise import (NoiseConfig, apply_lens_distortion, apply_sensor_noise, distort_points,
                               distortion_is_monotone, quantize, undistort_points)
from src.capture_renderer import IrCapture, RenderSettings, render_capture
from src.geometry import Pose
from src.scene import Instance, Material, Scene, make_plane
from src.sensor_model import Intrinsics


def vga(**coeffs) -> Intrinsics:
    return Intrinsics(580.0, 580.0, 319.5, 239.5, 640, 480, **coeffs)


def capture_of(img) -> IrCapture:
    return IrCapture(np.asarray(img, dtype=np.float64), np.full(np.shape(img), np.nan), (Pose.identity(),), (0.0,))


GRID = np.stack(np.meshgrid(np.linspace(0, 639, 17), np.linspace(0, 479, 13)), axis=-1).reshape(-1, 2)


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.05, 0.05), st.floats(-0.01, 0.01), st.floats(-0.001, 0.001), st.floats(-0.001, 0.001))
def test_undistort_inverts_distort(k1, k2, p1, p2):
    intr = vga(k1=k1, k2=k2, p1=p1, p2=p2)
    back = undistort_points(distort_points(GRID, intr), intr)
    assert np.max(np.abs(back - GRID)) < 0.05


def test_zero_distortion_is_identity():
    np.testing.assert_array_equal(distort_points(GRID, vga()), GRID)


def test_monotone_check():
    assert distortion_is_monotone(vga(k1=-0.05))
    assert not distortion_is_monotone(vga(k1=-2.0))


def test_barrel_distortion_pulls_corners_in():
    intr = vga(k1=-0.05)
    corner = distort_points(np.array([[0.0, 0.0]]), intr)[0]
    assert corner[0] > 0.0 and corner[1] > 0.0
    centre = distort_points(np.array([[319.5, 239.5]]), intr)[0]
    np.testing.assert_allclose(centre, [319.5, 239.5])


def test_lens_warp_without_coefficients_copies(rng):
    img = rng.uniform(size=(48, 64))
    out = apply_lens_distortion(capture_of(img), Intrinsics(60.0, 60.0, 31.5, 23.5, 64, 48))
    np.testing.assert_array_equal(out.intensities, img)
    assert out.intensities is not img


def test_lens_warp_keeps_centre_and_stays_in_range(rng):
    img = rng.uniform(size=(48, 64))
    out = apply_lens_distortion(capture_of(img), Intrinsics(60.0, 60.0, 31.5, 23.5, 64, 48, k1=-0.1))
    assert out.intensities.min() >= 0.0 and out.intensities.max() <= 1.0
    assert out.intensities.shape == img.shape


def test_quantize_levels():
    out = quantize(np.array([-0.2, 0.0, 0.5004, 1.0, 3.0]), bit_depth=2)
    np.testing.assert_allclose(out, [0.0, 0.0, 2 / 3, 1.0, 1.0])


def test_noiseless_config_only_quantizes(rng):
    img = rng.uniform(size=(20, 30))
    out = apply_sensor_noise(capture_of(img), NoiseConfig.noiseless(), bit_depth=10)
    np.testing.assert_array_equal(out.intensities, quantize(img, 10))


def test_noise_is_deterministic_per_seed(rng):
    img = np.full((40, 40), 0.5)
    cfg = NoiseConfig(gaussian_sigma=0.02, grain_sigma=0.05, scratch_count=2, seed=9)
    a = apply_sensor_noise(capture_of(img), cfg)
    b = apply_sensor_noise(capture_of(img), cfg)
    c = apply_sensor_noise(capture_of(img), NoiseConfig(gaussian_sigma=0.02, grain_sigma=0.05, scratch_count=2, seed=10))
    np.testing.assert_array_equal(a.intensities, b.intensities)
    assert not np.array_equal(a.intensities, c.intensities)


def test_read_noise_has_requested_spread():
    img = np.full((200, 200), 0.5)
    out = apply_sensor_noise(capture_of(img), NoiseConfig(gaussian_sigma=0.02, grain_sigma=0.0, seed=1), bit_depth=16)
    assert out.intensities.std() == pytest.approx(0.02, rel=0.05)
    assert out.intensities.mean() == pytest.approx(0.5, abs=0.002)


@pytest.fixture(scope="module")
def wall_capture(small_sensor):
    scene = Scene((Instance(make_plane(40.0, 40.0), Pose.from_euler((0, 0, 0), (0, 0, 1.5)), Material(albedo=0.5)),),
                  ambient_light=0.4)
    return render_capture(build_accelerator(scene), small_sensor, Pose.identity(), settings=RenderSettings(seed=1))


def test_noisy_capture_has_at_most_bit_depth_levels(wall_capture):
    cfg = NoiseConfig(gaussian_sigma=0.02, grain_sigma=0.01, scratch_count=1, seed=5)
    out = apply_sensor_noise(wall_capture, cfg, bit_depth=10).intensities
    assert np.unique(out).size <= 2 ** 10
    codes = out * 1023
    np.testing.assert_allclose(codes, np.round(codes), atol=1e-9)


def test_read_noise_keeps_the_capture_mean(wall_capture, small_sensor):
    flat = render_capture(build_accelerator(Scene((), ambient_light=0.3)), small_sensor, Pose.identity())
    for cap in (flat, wall_capture):
        out = apply_sensor_noise(cap, NoiseConfig(gaussian_sigma=0.02, grain_sigma=0.0, seed=2), bit_depth=10)
        assert out.intensities.mean() == pytest.approx(cap.intensities.mean(), abs=0.003)


def test_scratches_only_darken():
    img = np.full((64, 64), 0.8)
    out = apply_sensor_noise(capture_of(img), NoiseConfig(gaussian_sigma=0.0, grain_sigma=0.0, scratch_count=3),
                             bit_depth=16)
    assert out.intensities.max() <= 0.8 + 1e-4
    assert out.intensities.min() < 0.7


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(gaussian_sigma=-0.1)
    with pytest.raises(ValueError):
        NoiseConfig(scratch_count=-1)
