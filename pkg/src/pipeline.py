"""
pipeline.py — One frame, end to end
-------------------------------------
render → lens + sensor noise → block matching → depth → post-processing
(→ real-scan background blend). Shared by `simulate`, `inspect` and the
benchmark. Every stage appends a (stage, summary) line to the frame log.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from src.accel import AcceleratedScene
from src.capture_noise import NoiseConfig, apply_lens_distortion, apply_sensor_noise
from src.capture_renderer import IrCapture, MotionSpec, RenderSettings, render_capture
from src.compositor import add_floor, add_primitive_clutter, blend_real_background
from src.config import SimConfig, build_scene
from src.depth_post import PostSettings, postprocess, trim
from src.geometry import Pose
from src.scene import Scene
from src.sensor_model import SensorModel
from src.stereo_matcher import DepthMap, DisparityMap, MatchSettings, compute_disparity, disparity_to_depth

log = logging.getLogger(__name__)


@dataclass
class FrameResult:
    ideal: IrCapture
    noisy: IrCapture
    disparity: DisparityMap
    raw_depth: DepthMap
    depth: DepthMap
    stage_log: list[tuple[str, str]] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)


def frame_seeds(base_seed: int, frame_index: int) -> tuple[int, int, int]:
    """Independent (render, noise, motion) seeds for one frame."""
    render_seed, noise_seed, motion_seed = np.random.SeedSequence([base_seed, frame_index]).generate_state(3)
    return int(render_seed), int(noise_seed), int(motion_seed)


def build_world(cfg: SimConfig) -> Scene:
    """Configured objects plus optional floor and primitive clutter."""
    scene = build_scene(cfg)
    if cfg.scene.floor:
        scene = add_floor(scene, cfg.scene.floor_size_m)
    bg = cfg.background
    if bg.clutter_count:
        scene = add_primitive_clutter(scene, bg.clutter_count, bg.clutter_bounds_m, bg.clutter_seed)
    log.info(f"Scene: {len(scene.instances)} instances, {scene.triangle_count} triangles")
    return scene


def run_frame(accel: AcceleratedScene, sensor: SensorModel, pose: Pose, *,
              render: RenderSettings, noise: NoiseConfig, match: MatchSettings,
              post: PostSettings | None, motion: MotionSpec | None = None,
              background: DepthMap | None = None) -> FrameResult:
    """
    Run every stage for one camera pose. `post=None` stops after trimming
    (holes are data in the benchmark).
    """
    stage_log, timings = [], {}
    start = time.perf_counter()

    def mark(stage: str, msg: str, since: float) -> float:
        now = time.perf_counter()
        timings[stage] = now - since
        stage_log.append((stage, msg))
        log.debug(f"{stage}: {msg} ({timings[stage]:.2f}s)")
        return now

    t = start
    ideal = render_capture(accel, sensor, pose, motion, render)
    hit = int(np.isfinite(ideal.ideal_depth).sum())
    t = mark("render", f"{hit}/{ideal.intensities.size} pixels hit geometry", t)

    noisy = ideal
    if noise.distortion and sensor.camera.has_distortion:
        noisy = apply_lens_distortion(noisy, sensor.camera)
    noisy = apply_sensor_noise(noisy, noise, sensor.ir_bit_depth)
    t = mark("noise", f"sigma {noise.gaussian_sigma}, grain {noise.grain_sigma}, "
                      f"{noise.scratch_count} scratches", t)

    disparity = compute_disparity(noisy, sensor.reference_image, sensor, match)
    t = mark("match", f"{disparity.valid_count} valid disparities", t)

    raw_depth = disparity_to_depth(disparity, sensor)
    depth = postprocess(raw_depth, sensor, post) if post is not None else trim(raw_depth, sensor)
    if background is not None:
        depth = blend_real_background(depth, background)
    t = mark("post", f"{depth.valid_count} valid depths", t)

    timings["total"] = t - start
    return FrameResult(ideal, noisy, disparity, raw_depth, depth, stage_log, timings)
