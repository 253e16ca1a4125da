"""
capture_renderer.py — Virtual IR capture
------------------------------------------
Ray-traces what the sensor's IR camera sees while the projector (a pinhole
"spotlight" with the dot pattern as its cookie) lights the scene:

  per pixel   one primary ray (optionally jittered inside the pixel)
  at the hit  pattern lookup through the projector, BRDF (Lambert + Schlick
              specular), cos / r² falloff, shadow ray back to the projector
  always      ambient · albedo, plus any extra point/directional lights

Rows are rendered in chunks on a thread pool; the numba traversal kernels
release the GIL. Motion blur averages exposures along the camera path;
rolling shutter takes each row from its own displaced pose.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from src.accel import AcceleratedScene, intersect_many, occluded, surface_at
from src.geometry import Pose, normalize_rows
from src.sensor_model import SensorModel

log = logging.getLogger(__name__)

# ─── Constants ────────────────────────────────────────────────────────────────

SCHLICK_F0 = 0.04
SHADOW_BIAS = 1e-5      # m, along the shading normal
MOTION_MODES = ("static", "linear_velocity", "vibration", "rolling_shutter")


# ─── Types ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class MotionSpec:
    mode: str = "static"
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)    # m/s, camera frame
    amplitude: float = 0.0                                   # m
    exposures: int = 1
    frame_time: float = 1.0 / 30.0                           # s
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MOTION_MODES:
            raise ValueError(f"unknown motion mode {self.mode!r}; expected one of {MOTION_MODES}")
        if self.exposures < 1:
            raise ValueError("exposures must be >= 1")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.frame_time <= 0:
            raise ValueError("frame_time must be > 0")


@dataclass(frozen=True)
class RenderSettings:
    pixel_jitter: float = 0.5       # px, half-width of the uniform sample offset
    projector_power: float = 1.0    # radiance at 1 m, normal incidence, albedo 1
    seed: int = 0
    jobs: int = 1
    rows_per_chunk: int = 16

    def __post_init__(self):
        if not 0.0 <= self.pixel_jitter <= 0.5:
            raise ValueError("pixel_jitter must lie in [0, 0.5]")
        if self.projector_power < 0:
            raise ValueError("projector_power must be >= 0")
        if self.jobs < 1 or self.rows_per_chunk < 1:
            raise ValueError("jobs and rows_per_chunk must be >= 1")


@dataclass(frozen=True, eq=False)
class IrCapture:
    intensities: np.ndarray
    ideal_depth: np.ndarray          # camera z of the primary hit, NaN on miss
    poses: tuple[Pose, ...]
    timestamps: tuple[float, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensities.shape

    def with_intensities(self, intensities: np.ndarray) -> IrCapture:
        return replace(self, intensities=intensities)


# ─── Public entry points ──────────────────────────────────────────────────────

def render_capture(accel: AcceleratedScene, sensor: SensorModel, camera_pose: Pose,
                   motion: MotionSpec | None = None, settings: RenderSettings | None = None) -> IrCapture:
    """Render the IR capture seen from `camera_pose`. Non-static `motion` is delegated to render_with_motion."""
    settings = settings or RenderSettings()
    if motion is not None and motion.mode != "static":
        return render_with_motion(accel, sensor, camera_pose, motion, settings)
    h = sensor.camera.height
    rot = np.broadcast_to(camera_pose.rotation, (h, 3, 3))
    trans = np.broadcast_to(camera_pose.translation, (h, 3))
    intensities, depth = _render(accel, sensor, rot, trans, settings)
    return IrCapture(intensities, depth, (camera_pose,), (0.0,))


def render_with_motion(accel: AcceleratedScene, sensor: SensorModel, pose: Pose, motion: MotionSpec,
                       settings: RenderSettings | None = None) -> IrCapture:
    """
    linear_velocity / vibration → mean of `exposures` renders along the path.
    rolling_shutter → row r rendered at the pose displaced by velocity · (r / rows) · frame_time.
    A path with no displacement renders exactly like the static case.
    """
    settings = settings or RenderSettings()
    if motion.mode == "static":
        raise ValueError("render_with_motion needs a non-static motion mode")

    if motion.mode == "rolling_shutter":
        velocity = np.asarray(motion.velocity, dtype=np.float64)
        if not np.any(velocity):
            return render_capture(accel, sensor, pose, None, settings)
        h = sensor.camera.height
        times = np.arange(h) / h * motion.frame_time
        offsets = (times[:, None] * velocity) @ pose.rotation.T
        rot = np.broadcast_to(pose.rotation, (h, 3, 3))
        trans = pose.translation + offsets
        intensities, depth = _render(accel, sensor, rot, trans, settings)
        log.debug(f"rolling shutter: {h} row poses over {motion.frame_time * 1e3:.1f} ms")
        return IrCapture(intensities, depth, (pose, pose.translated(offsets[-1])), (0.0, float(times[-1])))

    path = motion_poses(pose, motion)
    if all(np.array_equal(p.translation, pose.translation) for p, _ in path):
        return render_capture(accel, sensor, pose, None, settings)
    frames = [render_capture(accel, sensor, p, None, settings) for p, _ in path]
    mean = np.mean(np.stack([f.intensities for f in frames]), axis=0)
    log.debug(f"{motion.mode}: averaged {len(frames)} exposures")
    return IrCapture(mean, frames[0].ideal_depth, tuple(p for p, _ in path), tuple(t for _, t in path))


def motion_poses(pose: Pose, motion: MotionSpec) -> list[tuple[Pose, float]]:
    """Exposure poses and timestamps for the averaging motion modes."""
    n = motion.exposures
    times = [k * motion.frame_time / n for k in range(n)]
    if motion.mode == "linear_velocity":
        velocity = np.asarray(motion.velocity, dtype=np.float64)
        return [(pose.translated(pose.rotation @ (velocity * t)), t) for t in times]
    if motion.mode == "vibration":
        rng = np.random.default_rng(motion.seed)
        shakes = rng.uniform(-motion.amplitude, motion.amplitude, size=(n, 3))
        return [(pose.translated(pose.rotation @ s), t) for s, t in zip(shakes, times)]
    return [(pose, 0.0)]


# ─── Core ─────────────────────────────────────────────────────────────────────

def _render(accel, sensor, row_rot, row_trans, settings):
    cam = sensor.camera
    h, w = cam.height, cam.width
    start = time.perf_counter()

    rng = np.random.default_rng(settings.seed)
    if settings.pixel_jitter > 0:
        jitter = rng.uniform(-settings.pixel_jitter, settings.pixel_jitter, size=(h, w, 2))
    else:
        jitter = np.zeros((h, w, 2))

    intensities = np.empty((h, w))
    depth = np.empty((h, w))
    chunks = [(r, min(r + settings.rows_per_chunk, h)) for r in range(0, h, settings.rows_per_chunk)]

    def render_chunk(bounds):
        r0, r1 = bounds
        img, z = _render_rows(accel, sensor, r0, r1, row_rot[r0:r1], row_trans[r0:r1], jitter[r0:r1], settings)
        intensities[r0:r1] = img
        depth[r0:r1] = z

    if settings.jobs == 1:
        for c in chunks:
            render_chunk(c)
    else:
        with ThreadPoolExecutor(max_workers=settings.jobs) as pool:
            list(pool.map(render_chunk, chunks))

    log.debug(f"rendered {w}x{h} in {time.perf_counter() - start:.2f}s ({settings.jobs} workers)")
    return intensities, depth


def _render_rows(accel, sensor, r0, r1, rot, trans, jitter, settings):
    cam = sensor.camera
    rows = r1 - r0
    w = cam.width
    v, u = np.mgrid[r0:r1, 0:w].astype(np.float64)
    u = u + jitter[:, :, 0]
    v = v + jitter[:, :, 1]
    d_cam = normalize_rows(np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1))
    d_world = np.einsum("rij,rwj->rwi", rot, d_cam).reshape(-1, 3)
    origins = np.repeat(trans, w, axis=0)
    rot_px = np.repeat(rot, w, axis=0)

    hits = intersect_many(accel, origins, d_world)
    ambient = accel.ambient_light
    out = np.full(rows * w, ambient)
    depth = np.full(rows * w, np.nan)
    if not hits.hit.any():
        return np.clip(out, 0.0, 1.0).reshape(rows, w), depth.reshape(rows, w)

    surf = surface_at(accel, origins, d_world, hits)
    idx = surf.rows
    depth[idx] = hits.distance[idx] * d_cam.reshape(-1, 3)[idx, 2]
    view = -d_world[idx]
    radiance = ambient * surf.albedo

    # projector term
    proj_world = np.einsum("nij,j->ni", rot_px[idx], sensor.projector_position) + origins[idx]
    p_cam = np.einsum("nji,nj->ni", rot_px[idx], surf.points - origins[idx])
    pu, pv, pz = sensor.project_to_projector(p_cam)
    pattern = np.where(pz > 0, sensor.sample_pattern(pu, pv), 0.0)
    radiance += settings.projector_power * pattern * _direct(accel, surf, view, proj_world, point_light=True)

    for light in accel.extra_lights:
        if light.kind == "point":
            term = _direct(accel, surf, view, np.asarray(light.vector, dtype=np.float64), point_light=True)
        else:
            to_light = -np.asarray(light.vector, dtype=np.float64)
            term = _direct(accel, surf, view, to_light / np.linalg.norm(to_light), point_light=False)
        radiance += light.power * term

    out[idx] = radiance
    return np.clip(out, 0.0, 1.0).reshape(rows, w), depth.reshape(rows, w)


def _direct(accel, surf, view, light, point_light: bool) -> np.ndarray:
    """BRDF · cos for one emitter, with inverse-square falloff for point emitters and shadowing."""
    n = surf.normals
    if point_light:
        to_light = light - surf.points
        dist = np.linalg.norm(to_light, axis=1)
        l_dir = to_light / np.maximum(dist, 1e-12)[:, None]
        falloff = 1.0 / np.maximum(dist, 1e-12) ** 2
    else:
        l_dir = np.broadcast_to(light, n.shape)
        dist = np.full(len(n), np.inf)
        falloff = 1.0
    cos_i = np.sum(n * l_dir, axis=1)
    lit = cos_i > 0.0
    result = np.zeros(len(n))
    if not lit.any():
        return result

    origins = surf.points[lit] + n[lit] * SHADOW_BIAS
    blocked = occluded(accel, origins, l_dir[lit], dist[lit] - SHADOW_BIAS)
    visible = np.flatnonzero(lit)[~blocked]

    brdf = _brdf(n[visible], l_dir[visible], view[visible], surf.albedo[visible],
                 surf.reflectance_ratio[visible], surf.roughness[visible])
    f = falloff[visible] if point_light else falloff
    result[visible] = brdf * cos_i[visible] * f
    return result


def _brdf(n, l_dir, view, albedo, ratio, roughness):
    """Lambert diffuse + normalized Blinn-Phong lobe weighted by Schlick's Fresnel term."""
    half = normalize_rows(l_dir + view)
    n_dot_h = np.clip(np.sum(n * half, axis=1), 0.0, 1.0)
    v_dot_h = np.clip(np.sum(view * half, axis=1), 0.0, 1.0)
    fresnel = SCHLICK_F0 + (1.0 - SCHLICK_F0) * (1.0 - v_dot_h) ** 5
    shininess = 2.0 / roughness ** 2 - 2.0
    specular = fresnel * (shininess + 2.0) / 2.0 * n_dot_h ** shininess
    return albedo * (1.0 - ratio) + albedo * ratio * specular
