"""
cli.py — Command-line front-end
---------------------------------
  slsim simulate   render a dataset over the configured viewpoints
  slsim benchmark  flat-wall depth error report
  slsim pattern    write a projector dot pattern
  slsim inspect    dump every stage of one frame
  slsim config     write the default config file

Exit code 0 on success; failures print `error [category]: message` and exit
with the category's code (1 for anything unexpected).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from src import image_io
from src.accel import build_accelerator
from src.benchmark import BenchmarkSettings, export_report, run_flat_wall
from src.config import (build_sensor, env_log_level, load_config, match_settings, motion_spec, noise_config,
                        post_settings, render_settings, write_default_config)
from src.dataset import dump_stages, generate_dataset, sample_viewpoints
from src.compositor import animate_background, load_background_scan
from src.errors import SimulationError
from src.pipeline import build_world, frame_seeds, run_frame
from src.sensor_model import generate_dot_pattern

log = logging.getLogger(__name__)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slsim", description="Structured-light depth sensor simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help="output directory"):
        p.add_argument("--config", type=Path, default=None, help="TOML config (defaults when omitted)")
        p.add_argument("--out", type=Path, default=None, help=out_help)
        p.add_argument("--jobs", type=int, default=None, help="worker threads")
        p.add_argument("--seed", type=int, default=None, help="base seed")

    p = sub.add_parser("simulate", help="render a dataset over the configured viewpoints",
                       description="Render a dataset over the configured viewpoints. With post.fill_holes "
                                   "on (the default) filled depths are interpolated and fall between the "
                                   "sensor's representable depths; set it false to keep every depth on that set.")
    common(p)
    p.add_argument("--count", type=int, default=None, help="viewpoint count (random mode)")

    p = sub.add_parser("benchmark", help="flat-wall depth error report")
    common(p)
    p.add_argument("--distances", type=_floats, default=None, help="e.g. 1.0,2.0,3.0 (m)")
    p.add_argument("--tilts", type=_floats, default=None, help="e.g. 0,40,80 (deg)")
    p.add_argument("--seeds", type=int, default=None, help="seeds per cell")
    p.add_argument("--pdf", action="store_true", help="also write report.pdf")

    p = sub.add_parser("pattern", help="write a projector dot pattern")
    common(p, out_help="PNG path")
    p.add_argument("--side", type=int, default=None, help="pattern side (px)")
    p.add_argument("--density", type=float, default=None, help="dot density")

    p = sub.add_parser("inspect", help="dump every stage of one frame")
    common(p)
    p.add_argument("--frame", type=int, default=0, help="viewpoint index")

    p = sub.add_parser("config", help="write the default config file")
    p.add_argument("--out", type=Path, default=Path("slsim.toml"), help="config path")
    return parser


# ─── Commands ─────────────────────────────────────────────────────────────────

def _load(args, extra: dict | None = None, out_is_dir: bool = True):
    overrides = dict(extra or {})
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        overrides["output.jobs"] = args.jobs
    if out_is_dir and getattr(args, "out", None) is not None:
        overrides["output.out_dir"] = str(args.out)
    return load_config(args.config, overrides)


def cmd_simulate(args) -> int:
    extra = {"viewpoints.count": args.count} if args.count is not None else {}
    cfg = _load(args, extra)
    manifest = generate_dataset(cfg)
    print(f"manifest: {manifest}")
    return 0


def run_benchmark(config=None, out_dir=None, jobs: int | None = None, seed: int | None = None,
                  distances=None, tilts=None, seeds: int | None = None, pdf: bool | None = None) -> list[Path]:
    """Load `config`, apply overrides, run the flat-wall grid and export the report."""
    overrides = {}
    for key, value in (("benchmark.distances_m", distances), ("benchmark.tilts_deg", tilts),
                       ("benchmark.seeds", seeds), ("benchmark.pdf", pdf), ("seed", seed),
                       ("output.jobs", jobs), ("output.out_dir", None if out_dir is None else str(out_dir))):
        if value is not None:
            overrides[key] = value
    cfg = load_config(config, overrides)
    bench = cfg.benchmark
    sensor = build_sensor(cfg)
    settings = BenchmarkSettings(
        render=render_settings(cfg, cfg.seed),
        noise=noise_config(cfg, cfg.seed),
        match=match_settings(cfg),
        wall_size_m=bench.wall_size_m,
        wall_albedo=bench.wall_albedo,
        ambient_light=cfg.render.ambient_light,
        base_seed=cfg.seed,
        jobs=cfg.output.jobs,
    )
    report = run_flat_wall(sensor, bench.distances_m, bench.tilts_deg, bench.seeds, settings)
    report.error_models = dict(bench.error_models)
    return export_report(report, cfg.output.out_dir, pdf=bench.pdf)


def cmd_benchmark(args) -> int:
    written = run_benchmark(args.config, args.out, args.jobs, args.seed, args.distances, args.tilts,
                            args.seeds, True if args.pdf else None)
    for path in written:
        print(path)
    return 0


def cmd_pattern(args) -> int:
    extra = {}
    if args.side is not None:
        extra["sensor.pattern_side_px"] = args.side
    if args.density is not None:
        extra["sensor.pattern_density"] = args.density
    cfg = _load(args, extra, out_is_dir=False)
    s = cfg.sensor
    seed = args.seed if args.seed is not None else s.pattern_seed
    pattern = generate_dot_pattern(s.pattern_side_px, s.pattern_density, seed, s.window_size_px)
    out = args.out or Path(cfg.output.out_dir) / "pattern.png"
    image_io.write_gray8(out, pattern.image)
    print(out)
    return 0


def cmd_inspect(args) -> int:
    cfg = _load(args)
    sensor = build_sensor(cfg)
    scene = build_world(cfg)
    vp = cfg.viewpoints
    target = vp.target_m if vp.target_m is not None else scene.target_centroid()
    poses = sample_viewpoints(vp.mode, vp.count, vp.subdivision, vp.radius_range_m, cfg.seed, target,
                              vp.cap_angle_deg, sensor.depth_range_m)
    if not 0 <= args.frame < len(poses):
        raise SimulationError(f"frame {args.frame} outside 0..{len(poses) - 1}")
    background = load_background_scan(cfg.resolve(cfg.background.real_scan)) if cfg.background.real_scan else None
    render_seed, noise_seed, motion_seed = frame_seeds(cfg.seed, args.frame)
    jobs = cfg.output.jobs
    frame = run_frame(
        build_accelerator(animate_background(scene, args.frame, cfg.background.velocity_m_s,
                                             cfg.background.angular_velocity_deg_s, cfg.motion.frame_time_s)),
        sensor, poses[args.frame],
        render=render_settings(cfg, render_seed, jobs),
        noise=noise_config(cfg, noise_seed),
        match=match_settings(cfg, jobs),
        post=post_settings(cfg),
        motion=motion_spec(cfg, motion_seed),
        background=background,
    )
    out_dir = Path(cfg.output.out_dir) / f"inspect_{args.frame:06d}"
    for path in dump_stages(frame, out_dir):
        print(path)
    for stage, msg in frame.stage_log:
        log.info(f"{stage}: {msg}")
    return 0


def cmd_config(args) -> int:
    print(write_default_config(args.out))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "benchmark": cmd_benchmark,
    "pattern": cmd_pattern,
    "inspect": cmd_inspect,
    "config": cmd_config,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else env_log_level(),
        format="[%(module)s.py] %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except SimulationError as e:
        print(f"error [{e.category}]: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        log.debug("unexpected failure", exc_info=True)
        print(f"error [internal]: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
