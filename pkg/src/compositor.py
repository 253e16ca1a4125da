"""
compositor.py — Backgrounds for generated scans
-------------------------------------------------
Geometry backgrounds are composed before rendering so they cast and receive
pattern shadows:
  - random primitive clutter (boxes / spheres / cylinders)
  - a floor plane under the target
  - background instances re-posed per frame (moving geometry)
Real captured scans can only be composed after reconstruction, by
z-compositing two depth maps.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.spatial.transform import Rotation

from src import image_io
from src.errors import ResolutionMismatchError
from src.geometry import Pose
from src.scene import Instance, Material, Scene, make_box, make_cylinder, make_plane, make_sphere
from src.stereo_matcher import DepthMap

log = logging.getLogger(__name__)

MAX_PLACEMENT_ATTEMPTS = 200
SIZE_FRACTION = (0.05, 0.25)      # primitive size as a fraction of the smallest bounds extent


def add_primitive_clutter(scene: Scene, count: int, bounds, seed: int) -> Scene:
    """
    Scatter `count` random primitives whose world bounding boxes lie inside
    `bounds` = (min_xyz, max_xyz) and stay clear of the target's bounding box.
    Placements that keep failing are skipped with a warning.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    extent = hi - lo
    if lo.shape != (3,) or np.any(extent <= 0):
        raise ValueError(f"bounds must be a non-degenerate 3D box, got {lo} .. {hi}")
    if count == 0:
        return scene

    rng = np.random.default_rng(seed)
    target = scene.bounds_of("target")
    scale = extent.min()
    placed = []
    for i in range(count):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            inst = _random_primitive(rng, lo, hi, scale, name=f"clutter_{i:03d}")
            box_lo, box_hi = inst.world_bounds()
            if np.any(box_lo < lo) or np.any(box_hi > hi):
                continue
            if target is not None and _boxes_overlap(box_lo, box_hi, *target):
                continue
            placed.append(inst)
            break
        else:
            log.warning(f"clutter {i}: no free placement after {MAX_PLACEMENT_ATTEMPTS} attempts, skipped")
    log.info(f"Added {len(placed)}/{count} clutter primitives")
    return scene.with_instances(placed)


def _random_primitive(rng, lo, hi, scale, name) -> Instance:
    size = rng.uniform(*SIZE_FRACTION, size=3) * scale
    kind = rng.integers(0, 3)
    if kind == 0:
        mesh = make_box(size)
    elif kind == 1:
        mesh = make_sphere(0.5 * size[0], subdivisions=2)
    else:
        mesh = make_cylinder(0.5 * size[0], size[1])
    rotation = Rotation.random(random_state=rng).as_matrix()
    pose = Pose(rotation, rng.uniform(lo, hi))
    material = Material(
        albedo=float(rng.uniform(0.2, 0.9)),
        reflectance_ratio=float(rng.uniform(0.0, 0.3)),
        roughness=float(rng.uniform(0.3, 1.0)),
    )
    return Instance(mesh, pose, material, role="clutter", name=name)


def _boxes_overlap(a_lo, a_hi, b_lo, b_hi) -> bool:
    return bool(np.all(a_lo <= b_hi) and np.all(b_lo <= a_hi))


def add_floor(scene: Scene, size_m: float = 10.0, material: Material | None = None,
              height_m: float | None = None) -> Scene:
    """Horizontal plane (world up is +z) at the bottom of the target, or at `height_m`."""
    if height_m is None:
        box = scene.bounds_of("target")
        height_m = float(box[0][2]) if box is not None else 0.0
    center = scene.target_centroid()
    floor = Instance(
        make_plane(size_m, size_m),
        Pose(np.eye(3), (center[0], center[1], height_m)),
        material or Material(albedo=0.6),
        role="floor",
        name="floor",
    )
    return scene.with_instances([floor])


def animate_background(scene: Scene, frame_index: int, velocity=(0.0, 0.0, 0.0),
                       angular_velocity_deg: float = 0.0, frame_time: float = 1.0 / 30.0) -> Scene:
    """Re-pose background instances for `frame_index`: translation v·t, spin ω·t about world z."""
    t = frame_index * frame_time
    offset = np.asarray(velocity, dtype=np.float64) * t
    spin = Rotation.from_euler("z", angular_velocity_deg * t, degrees=True).as_matrix()
    moved = []
    for inst in scene.instances:
        if inst.role == "background":
            inst = inst.reposed(Pose(spin @ inst.pose.rotation, inst.pose.translation + offset))
        moved.append(inst)
    return Scene(tuple(moved), scene.ambient_light, scene.extra_lights)


def blend_real_background(depth: DepthMap, background: DepthMap) -> DepthMap:
    """Per-pixel z-compositing: nearest valid layer wins."""
    if depth.shape != background.shape:
        raise ResolutionMismatchError(f"foreground {depth.shape} vs background {background.shape}")
    fg = np.where(depth.valid, depth.values, np.inf)
    bg = np.where(background.valid, background.values, np.inf)
    valid = depth.valid | background.valid
    return DepthMap(np.where(valid, np.minimum(fg, bg), np.nan), valid)


def load_background_scan(path) -> DepthMap:
    """16-bit millimetre PNG (0 = invalid) → DepthMap."""
    values, valid = image_io.read_depth_png(path)
    return DepthMap(values, valid)
