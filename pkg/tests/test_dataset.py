import numpy as np
import pytest
from scipy import stats

from src import image_io
from src.accel import build_accelerator
from src.config import (build_sensor, load_config, match_settings, motion_spec, noise_config, post_settings,
                        render_settings)
from src.dataset import MANIFEST, generate_dataset, read_manifest, sample_viewpoint_records, sample_viewpoints
from src.errors import SensorRangeError
from src.geometry import Pose
from src.pipeline import build_world, run_frame

TARGET = np.array([0.2, -0.1, 0.5])


# ── Viewpoints ────────────────────────────────────────────────────────────────

def test_icosphere_gives_twelve_poses_looking_at_target():
    poses = sample_viewpoints("icosphere", subdivision=0, radius_range=(1.0, 2.0), target=TARGET)
    assert len(poses) == 12
    for pose in poses:
        to_target = TARGET - pose.translation
        assert np.linalg.norm(to_target) == pytest.approx(1.5)
        axis = pose.rotation[:, 2]
        assert np.cross(axis, to_target / np.linalg.norm(to_target)) == pytest.approx(np.zeros(3), abs=1e-9)
        assert axis @ to_target > 0


def test_icosphere_subdivision_and_cap():
    assert len(sample_viewpoints("icosphere", subdivision=1)) == 42
    capped = sample_viewpoints("icosphere", subdivision=1, cap_angle_deg=60.0)
    assert 0 < len(capped) < 42
    for pose in capped:
        assert pose.translation[2] >= 1.5 * np.cos(np.radians(60.0)) - 1e-9


def test_random_radii_are_uniform():
    poses = sample_viewpoints("random", count=2000, radius_range=(1.0, 3.0), seed=5, target=TARGET)
    radii = np.array([np.linalg.norm(p.translation - TARGET) for p in poses])
    assert radii.min() >= 1.0 and radii.max() <= 3.0
    assert stats.kstest((radii - 1.0) / 2.0, "uniform").pvalue > 1e-3


def test_random_directions_respect_cap():
    poses = sample_viewpoints("random", count=500, cap_angle_deg=45.0, seed=1)
    heights = np.array([p.translation[2] / np.linalg.norm(p.translation) for p in poses])
    assert heights.min() >= np.cos(np.radians(45.0)) - 1e-9


def test_random_viewpoints_are_seeded():
    assert sample_viewpoint_records("random", count=5, seed=2) == sample_viewpoint_records("random", count=5, seed=2)
    assert sample_viewpoint_records("random", count=5, seed=2) != sample_viewpoint_records("random", count=5, seed=3)


def test_viewpoint_argument_errors():
    with pytest.raises(SensorRangeError):
        sample_viewpoints("random", radius_range=(0.2, 1.0), depth_range=(0.4, 8.0))
    with pytest.raises(ValueError):
        sample_viewpoints("random", radius_range=(2.0, 1.0))
    with pytest.raises(ValueError):
        sample_viewpoints("spiral")


# ── Generation ────────────────────────────────────────────────────────────────

@pytest.fixture
def small_cfg(small_config_overrides, tmp_path):
    return load_config(overrides={**small_config_overrides, "output.out_dir": str(tmp_path / "ds")})


def test_dataset_writes_manifest_and_images(small_cfg, tmp_path):
    manifest = generate_dataset(small_cfg)
    assert manifest == tmp_path / "ds" / MANIFEST
    header, frames = read_manifest(tmp_path / "ds")
    assert header["frames"] == 3
    assert [f["frame"] for f in frames] == [0, 1, 2]
    for f in frames:
        assert set(f["files"]) == {"depth", "ir"}
        depth, valid = image_io.read_depth_png(tmp_path / "ds" / f["files"]["depth"])
        assert depth.shape == (120, 160)
        assert valid.mean() == pytest.approx(f["valid_fraction"])
    assert any(f["valid_fraction"] > 0 for f in frames)


def test_manifest_pose_and_seeds_reproduce_the_frame(small_cfg, tmp_path):
    generate_dataset(small_cfg)
    _, frames = read_manifest(tmp_path / "ds")
    entry = frames[1]
    sensor = build_sensor(small_cfg)
    seeds = entry["seeds"]
    frame = run_frame(
        build_accelerator(build_world(small_cfg)), sensor, Pose.from_dict(entry["pose"]),
        render=render_settings(small_cfg, seeds["render"]),
        noise=noise_config(small_cfg, seeds["noise"]),
        match=match_settings(small_cfg),
        post=post_settings(small_cfg),
        motion=motion_spec(small_cfg, seeds["motion"]),
    )
    stored, _ = image_io.read_depth_png(tmp_path / "ds" / entry["files"]["depth"])
    expected = image_io.encode_depth_mm(frame.depth.values, frame.depth.valid)
    np.testing.assert_array_equal(np.nan_to_num(stored * 1000.0).round().astype(np.uint16), expected)


def test_dataset_is_deterministic_across_worker_counts(small_cfg, tmp_path):
    generate_dataset(small_cfg, out_dir=tmp_path / "a", jobs=1)
    generate_dataset(small_cfg, out_dir=tmp_path / "b", jobs=3)
    for i in range(3):
        a = (tmp_path / "a" / "depth" / f"{i:06d}.png").read_bytes()
        b = (tmp_path / "b" / "depth" / f"{i:06d}.png").read_bytes()
        assert a == b
    assert read_manifest(tmp_path / "a") == read_manifest(tmp_path / "b")


def test_rerun_resumes_missing_frames_only(small_cfg, tmp_path):
    out = tmp_path / "ds"
    generate_dataset(small_cfg)
    depth_files = [out / "depth" / f"{i:06d}.png" for i in range(3)]
    stamps = [p.stat().st_mtime_ns for p in depth_files]

    generate_dataset(small_cfg)
    assert [p.stat().st_mtime_ns for p in depth_files] == stamps

    depth_files[2].unlink()
    generate_dataset(small_cfg)
    assert [p.stat().st_mtime_ns for p in depth_files[:2]] == stamps[:2]
    assert depth_files[2].exists()
    _, frames = read_manifest(out)
    assert [f["frame"] for f in frames] == [0, 1, 2]


def test_changed_config_regenerates(small_cfg, small_config_overrides, tmp_path):
    out = tmp_path / "ds"
    generate_dataset(small_cfg)
    header, _ = read_manifest(out)
    other = load_config(overrides={**small_config_overrides, "output.out_dir": str(out), "noise.gaussian_sigma": 0.02})
    generate_dataset(other)
    new_header, frames = read_manifest(out)
    assert new_header["config_hash"] != header["config_hash"]
    assert all(f["config_hash"] == new_header["config_hash"] for f in frames)


def test_seed_argument_changes_viewpoints(small_cfg, tmp_path):
    generate_dataset(small_cfg, out_dir=tmp_path / "a")
    generate_dataset(small_cfg, out_dir=tmp_path / "b", seed=99)
    _, a = read_manifest(tmp_path / "a")
    _, b = read_manifest(tmp_path / "b")
    assert a[0]["pose"] != b[0]["pose"]
