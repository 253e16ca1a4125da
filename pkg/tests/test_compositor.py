import numpy as np
import pytest

from src import image_io
from src.compositor import (add_floor, add_primitive_clutter, animate_background, blend_real_background,
                            load_background_scan)
from src.errors import AssetNotFoundError, ResolutionMismatchError
from src.geometry import Pose
from src.scene import Instance, Scene, make_box
from src.stereo_matcher import DepthMap

BOUNDS = ((-1.0, -1.0, -0.5), (1.0, 1.0, 0.5))


@pytest.fixture
def target_scene():
    return Scene((Instance(make_box((0.3, 0.3, 0.3)), name="target"),))


def test_clutter_stays_in_bounds_and_clear_of_target(target_scene):
    scene = add_primitive_clutter(target_scene, 6, BOUNDS, seed=1)
    clutter = [i for i in scene.instances if i.role == "clutter"]
    assert 0 < len(clutter) <= 6
    t_lo, t_hi = target_scene.bounds_of("target")
    for inst in clutter:
        lo, hi = inst.world_bounds()
        assert np.all(lo >= BOUNDS[0]) and np.all(hi <= BOUNDS[1])
        assert not (np.all(lo <= t_hi) and np.all(t_lo <= hi))


def test_clutter_is_seeded(target_scene):
    a = add_primitive_clutter(target_scene, 4, BOUNDS, seed=3)
    b = add_primitive_clutter(target_scene, 4, BOUNDS, seed=3)
    assert [i.pose.translation.tolist() for i in a.instances] == [i.pose.translation.tolist() for i in b.instances]


def test_zero_clutter_returns_scene_unchanged(target_scene):
    assert add_primitive_clutter(target_scene, 0, BOUNDS, seed=0) is target_scene


def test_clutter_rejects_flat_bounds(target_scene):
    with pytest.raises(ValueError):
        add_primitive_clutter(target_scene, 2, ((0, 0, 0), (1, 1, 0)), seed=0)


def test_floor_sits_under_target(target_scene):
    scene = add_floor(target_scene)
    floor = next(i for i in scene.instances if i.role == "floor")
    assert floor.world_bounds()[0][2] == pytest.approx(-0.15)


def test_animate_background_moves_only_background(target_scene):
    bg = Instance(make_box((0.1, 0.1, 0.1)), Pose.from_euler((0, 0, 0), (1.0, 0.0, 0.0)), role="background")
    scene = target_scene.with_instances([bg])
    moved = animate_background(scene, 30, velocity=(0.0, 0.3, 0.0), frame_time=1.0 / 30.0)
    np.testing.assert_allclose(moved.instances[1].pose.translation, [1.0, 0.3, 0.0])
    np.testing.assert_array_equal(moved.instances[0].pose.translation, [0.0, 0.0, 0.0])
    still = animate_background(scene, 0, velocity=(0.0, 0.3, 0.0))
    np.testing.assert_array_equal(still.instances[1].pose.translation, [1.0, 0.0, 0.0])


def test_blend_keeps_nearest_valid_layer():
    fg = DepthMap(np.array([[1.0, np.nan, 3.0]]), np.array([[True, False, True]]))
    bg = DepthMap(np.array([[2.0, 2.0, 2.0]]), np.array([[True, True, True]]))
    out = blend_real_background(fg, bg)
    np.testing.assert_array_equal(out.values, [[1.0, 2.0, 2.0]])


def test_blend_shape_mismatch():
    with pytest.raises(ResolutionMismatchError):
        blend_real_background(DepthMap.empty((2, 2)), DepthMap.empty((2, 3)))


def test_background_scan_round_trip(tmp_path):
    values = np.array([[1.25, 0.0], [2.5, 7.0]])
    valid = values > 0
    path = image_io.write_depth_png(tmp_path / "bg.png", values, valid)
    scan = load_background_scan(path)
    np.testing.assert_array_equal(scan.valid, valid)
    np.testing.assert_allclose(scan.values[valid], values[valid])


def test_missing_background_scan(tmp_path):
    with pytest.raises(AssetNotFoundError):
        load_background_scan(tmp_path / "none.png")
