"""
dataset.py — Synthetic scan datasets
--------------------------------------
Pipeline:
  1. sample camera viewpoints around the target (icosphere vertices or random cap)
  2. run one full frame per viewpoint over a bounded worker pool
  3. write depth PNG (+ IR / disparity dumps) and one manifest record per frame

manifest.jsonl: a header line with the config hash and sensor summary,
then one record per frame (pose as quaternion + translation, seeds, files).
A rerun with the same config hash skips frames whose files already exist.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path

import numpy as np
import trimesh

from src import image_io
from src.accel import build_accelerator
from src.compositor import animate_background, load_background_scan
from src.config import (SimConfig, build_sensor, config_hash, load_config, match_settings, motion_spec,
                        noise_config, post_settings, render_settings)
from src.errors import ResolutionMismatchError, SensorRangeError
from src.geometry import Pose
from src.pipeline import FrameResult, build_world, frame_seeds, run_frame

log = logging.getLogger(__name__)

MANIFEST = "manifest.jsonl"


# ─── Viewpoints ───────────────────────────────────────────────────────────────

def sample_viewpoint_records(mode: str, count: int = 12, subdivision: int = 0, radius_range=(1.0, 2.0),
                             seed: int = 0, target=(0.0, 0.0, 0.0), cap_angle_deg: float = 180.0,
                             depth_range=None) -> list[dict]:
    """
    Camera poses as manifest-ready dicts. Rendering always goes through
    Pose.from_dict of these, so a pose read back from the manifest is
    bit-identical to the one that was rendered.

    icosphere: one pose per vertex of the subdivided icosahedron inside the
    cap, at the mid radius. random: directions uniform over the cap,
    radius uniform in the range.
    """
    lo, hi = (float(r) for r in radius_range)
    if not 0.0 < lo <= hi:
        raise ValueError(f"radius range must be non-empty and positive, got [{lo}, {hi}]")
    if depth_range is not None and (lo < depth_range[0] or hi > depth_range[1]):
        raise SensorRangeError(f"radius range [{lo}, {hi}] m outside the sensor range "
                               f"[{depth_range[0]}, {depth_range[1]}] m")
    target = np.asarray(target, dtype=np.float64)
    cos_cap = np.cos(np.radians(cap_angle_deg))

    if mode == "icosphere":
        dirs = trimesh.creation.icosphere(subdivisions=subdivision, radius=1.0).vertices
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        dirs = dirs[dirs[:, 2] >= cos_cap - 1e-12]
        radii = np.full(len(dirs), 0.5 * (lo + hi))
    elif mode == "random":
        if count < 1:
            raise ValueError("count must be >= 1")
        rng = np.random.default_rng(seed)
        cos_theta = rng.uniform(cos_cap, 1.0, size=count)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=count)
        sin_theta = np.sqrt(np.maximum(0.0, 1.0 - cos_theta ** 2))
        dirs = np.column_stack([sin_theta * np.cos(phi), sin_theta * np.sin(phi), cos_theta])
        radii = rng.uniform(lo, hi, size=count)
    else:
        raise ValueError(f"unknown viewpoint mode {mode!r}; expected 'icosphere' or 'random'")

    if len(dirs) == 0:
        raise ValueError(f"no icosphere vertex inside a {cap_angle_deg} deg cap")
    records = [Pose.look_at(target + r * d, target).to_dict() for d, r in zip(dirs, radii)]
    log.info(f"Viewpoints: {len(records)} ({mode}), radius {lo:.2f}–{hi:.2f} m")
    return records


def sample_viewpoints(mode: str, count: int = 12, subdivision: int = 0, radius_range=(1.0, 2.0),
                      seed: int = 0, target=(0.0, 0.0, 0.0), cap_angle_deg: float = 180.0,
                      depth_range=None) -> list[Pose]:
    records = sample_viewpoint_records(mode, count, subdivision, radius_range, seed, target, cap_angle_deg,
                                       depth_range)
    return [Pose.from_dict(r) for r in records]


# ─── Manifest ─────────────────────────────────────────────────────────────────

def read_manifest(out_dir) -> tuple[dict | None, list[dict]]:
    path = Path(out_dir) / MANIFEST
    if not path.exists():
        return None, []
    header, frames = None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            entry = json.loads(line)
            if entry.get("kind") == "header":
                header = entry
            else:
                frames.append(entry)
    return header, frames


def _write_manifest(out_dir: Path, header: dict, frames: list[dict]):
    path = out_dir / MANIFEST
    tmp = path.with_suffix(".jsonl.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, default=float) + "\n")
        for entry in sorted(frames, key=lambda e: e["frame"]):
            fh.write(json.dumps(entry, default=float) + "\n")
    tmp.replace(path)


def _completed(out_dir: Path, header: dict | None, frames: list[dict], digest: str) -> dict[int, dict]:
    if header is None or header.get("config_hash") != digest:
        if header is not None:
            log.warning("Existing manifest was written with a different config; regenerating every frame")
        return {}
    done = {}
    for entry in frames:
        if all((out_dir / f).exists() for f in entry["files"].values()):
            done[entry["frame"]] = entry
    return done


# ─── Generation ───────────────────────────────────────────────────────────────

def generate_dataset(config, out_dir=None, jobs: int | None = None, seed: int | None = None) -> Path:
    """Render every viewpoint of `config` (path or SimConfig) into `out_dir`; returns the manifest path."""
    cfg = config if isinstance(config, SimConfig) else load_config(config)
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed})
    out_dir = Path(out_dir or cfg.output.out_dir)
    jobs = jobs or cfg.output.jobs
    out_dir.mkdir(parents=True, exist_ok=True)

    sensor = build_sensor(cfg)
    scene = build_world(cfg)
    background = None
    if cfg.background.real_scan:
        background = load_background_scan(cfg.resolve(cfg.background.real_scan))
        if background.shape != sensor.camera.shape:
            raise ResolutionMismatchError(f"background scan {background.shape} vs camera {sensor.camera.shape}")

    vp = cfg.viewpoints
    target = vp.target_m if vp.target_m is not None else scene.target_centroid()
    records = sample_viewpoint_records(vp.mode, vp.count, vp.subdivision, vp.radius_range_m, cfg.seed,
                                       target, vp.cap_angle_deg, sensor.depth_range_m)

    digest = config_hash(cfg)
    header = {"kind": "header", "config_hash": digest, "seed": cfg.seed, "frames": len(records),
              "sensor": sensor.summary()}
    old_header, old_frames = read_manifest(out_dir)
    done = _completed(out_dir, old_header, old_frames, digest)
    pending = [i for i in range(len(records)) if i not in done]
    if done:
        log.info(f"Resuming: {len(done)} frames already on disk, {len(pending)} to go")

    moving = any(cfg.background.velocity_m_s) or cfg.background.angular_velocity_deg_s != 0.0
    static_accel = None if moving else build_accelerator(scene)
    _ = sensor.reference_image
    frame_pool = jobs > 1 and len(pending) > 1
    inner_jobs = 1 if frame_pool else jobs

    def work(i: int) -> dict:
        render_seed, noise_seed, motion_seed = frame_seeds(cfg.seed, i)
        accel = static_accel
        if accel is None:
            accel = build_accelerator(animate_background(
                scene, i, cfg.background.velocity_m_s, cfg.background.angular_velocity_deg_s,
                cfg.motion.frame_time_s))
        frame = run_frame(
            accel, sensor, Pose.from_dict(records[i]),
            render=render_settings(cfg, render_seed, inner_jobs),
            noise=noise_config(cfg, noise_seed),
            match=match_settings(cfg, inner_jobs),
            post=post_settings(cfg),
            motion=motion_spec(cfg, motion_seed),
            background=background,
        )
        files = write_frame(frame, out_dir, i, cfg.output.write_ir, cfg.output.write_disparity)
        return {"kind": "frame", "frame": i, "pose": records[i], "config_hash": digest,
                "seeds": {"render": render_seed, "noise": noise_seed, "motion": motion_seed},
                "valid_fraction": frame.depth.valid_count / frame.depth.values.size,
                "files": files}

    entries = dict(done)
    start = time.perf_counter()
    _write_manifest(out_dir, header, list(entries.values()))
    with open(out_dir / MANIFEST, "a", encoding="utf-8") as manifest:
        if not frame_pool:
            for i in pending:
                entries[i] = _append(manifest, work(i))
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(work, i) for i in pending]
                for fut in as_completed(futures):
                    entry = fut.result()
                    entries[entry["frame"]] = _append(manifest, entry)
    elapsed = time.perf_counter() - start
    _write_manifest(out_dir, header, list(entries.values()))

    rate = len(pending) / elapsed if elapsed > 0 else float("inf")
    log.info(f"Dataset: {len(pending)} frames in {elapsed:.1f}s ({rate:.2f} frames/sec) → {out_dir}")
    return out_dir / MANIFEST


def _append(manifest, entry: dict) -> dict:
    manifest.write(json.dumps(entry, default=float) + "\n")
    manifest.flush()
    log.debug(f"frame {entry['frame']}: valid {entry['valid_fraction']:.3f}")
    return entry


def write_frame(frame: FrameResult, out_dir: Path, index: int, write_ir: bool = True,
                write_disparity: bool = False) -> dict[str, str]:
    """Write one frame's files; returns their paths relative to `out_dir`."""
    name = f"{index:06d}"
    files = {"depth": f"depth/{name}.png"}
    image_io.write_depth_png(out_dir / files["depth"], frame.depth.values, frame.depth.valid)
    if write_ir:
        files["ir"] = f"ir/{name}.png"
        image_io.write_gray16(out_dir / files["ir"], frame.noisy.intensities)
    if write_disparity:
        files["disparity"] = f"disparity/{name}.tiff"
        image_io.write_float_tiff(out_dir / files["disparity"], frame.disparity.values, frame.disparity.valid)
    return files


def dump_stages(frame: FrameResult, out_dir) -> list[Path]:
    """Every intermediate stage of one frame, for `inspect`."""
    out_dir = Path(out_dir)
    ideal_valid = np.isfinite(frame.ideal.ideal_depth)
    written = [
        image_io.write_gray16(out_dir / "1_ir_ideal.png", frame.ideal.intensities),
        image_io.write_depth_png(out_dir / "1_depth_ideal.png", frame.ideal.ideal_depth, ideal_valid),
        image_io.write_gray16(out_dir / "2_ir_noisy.png", frame.noisy.intensities),
        image_io.write_float_tiff(out_dir / "3_disparity.tiff", frame.disparity.values, frame.disparity.valid),
        image_io.write_depth_png(out_dir / "4_depth_raw.png", frame.raw_depth.values, frame.raw_depth.valid),
        image_io.write_depth_png(out_dir / "5_depth_post.png", frame.depth.values, frame.depth.valid),
    ]
    log_path = out_dir / "stages.txt"
    log_path.write_text("".join(f"{stage}: {msg} ({frame.timings.get(stage, 0.0):.3f}s)\n"
                                for stage, msg in frame.stage_log), encoding="utf-8")
    return written + [log_path]
