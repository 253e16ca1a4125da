"""
config.py — Simulation configuration
--------------------------------------
One TOML file describes a whole run: sensor, scene, noise, matcher,
post-processing, background, motion, viewpoints, benchmark grids and output.
Every section is a pydantic model with the device defaults filled in, so
`slsim config` writes a complete, reproducible file.

Environment (read through .env as well):
  SLSIM_JOBS       default worker count
  SLSIM_OUT        default output directory
  SLSIM_LOG_LEVEL  default log level
"""

from __future__ import annotations

import hashlib
import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Literal

import numpy as np
import tomli_w
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

from src import image_io
from src.capture_noise import NoiseConfig
from src.capture_renderer import MotionSpec, RenderSettings
from src.depth_post import PostSettings
from src.errors import AssetNotFoundError, ConfigError
from src.geometry import Pose
from src.scene import (Instance, Light, Material, Scene, bumpy_normal_map, load_mesh, load_normal_map,
                       make_box, make_cylinder, make_plane, make_sphere)
from src.sensor_model import Intrinsics, SensorModel, generate_dot_pattern, load_pattern
from src.stereo_matcher import MatchSettings

load_dotenv()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ─── Sections ─────────────────────────────────────────────────────────────────

class CameraConfig(_Section):
    width: int = Field(640, ge=16)
    height: int = Field(480, ge=16)
    fx: float = Field(580.0, gt=0)
    fy: float = Field(580.0, gt=0)
    cx: float = 319.5
    cy: float = 239.5
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0


class SensorConfig(_Section):
    camera: CameraConfig = CameraConfig()
    baseline_m: float = Field(0.075, gt=0)
    depth_range_m: tuple[float, float] = (0.4, 8.0)
    orientation: Literal["horizontal", "vertical"] = "horizontal"
    projector_side: Literal[-1, 1] = -1
    projector_focal_px: float = Field(464.0, gt=0)     # for a pattern of `pattern_side_px`
    pattern_side_px: int = Field(640, ge=64)
    pattern_density: float = Field(0.1, gt=0, lt=0.5)
    pattern_seed: int = 7
    pattern_path: str | None = None
    window_size_px: int = 9
    subpixel_denominator: int = Field(8, ge=1)
    ir_bit_depth: int = Field(10, ge=1, le=16)
    reference_factor: float = Field(2.0, gt=0)


class LightConfig(_Section):
    kind: Literal["point", "directional"]
    vector: tuple[float, float, float]
    power: float = Field(1.0, ge=0)


class RenderConfig(_Section):
    pixel_jitter: float = Field(0.5, ge=0, le=0.5)
    projector_power: float = Field(1.0, ge=0)
    ambient_light: float = Field(0.0, ge=0)
    lights: list[LightConfig] = []


class NoiseSection(_Section):
    gaussian_sigma: float = Field(0.01, ge=0)
    grain_sigma: float = Field(0.01, ge=0)
    scratch_count: int = Field(0, ge=0)
    distortion: bool = True


class MatcherConfig(_Section):
    uniqueness_ratio: float = Field(0.8, gt=0, le=1)
    subpixel_method: Literal["parabolic", "equiangular"] = "parabolic"
    contrast_floor: float = Field(0.004, gt=0)
    reject_range_boundary: bool = True


class PostConfig(_Section):
    kernel_px: int = Field(3, ge=1)
    max_gap_px: int = Field(6, ge=0)
    fill_holes: bool = True    # filled pixels are interpolated and leave the representable depth set


class MaterialConfig(_Section):
    albedo: float = Field(0.8, ge=0, le=1)
    albedo_texture: str | None = None
    reflectance_ratio: float = Field(0.0, ge=0, le=1)
    roughness: float = Field(0.5, gt=0, le=1)


class ObjectConfig(_Section):
    mesh: str | None = None
    format: Literal["obj", "ply", "stl"] | None = None
    scale: float = Field(1.0, gt=0)
    primitive: Literal["box", "sphere", "cylinder", "plane"] | None = None
    size_m: list[float] = [0.3]
    position_m: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    role: Literal["target", "background", "floor", "clutter"] = "target"
    material: MaterialConfig = MaterialConfig()
    normal_map: str | None = None          # image path, or "bumpy" for a generated one
    normal_map_tile_m: float = Field(0.1, gt=0)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.mesh is None) == (self.primitive is None):
            raise ValueError("each object needs exactly one of `mesh` or `primitive`")
        return self


class SceneConfig(_Section):
    objects: list[ObjectConfig] = [ObjectConfig(primitive="sphere", size_m=[0.3])]
    floor: bool = False
    floor_size_m: float = Field(10.0, gt=0)


class BackgroundConfig(_Section):
    clutter_count: int = Field(0, ge=0)
    clutter_bounds_m: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (-2.0, -2.0, -1.0), (2.0, 2.0, 1.0))
    clutter_seed: int = 0
    velocity_m_s: tuple[float, float, float] = (0.0, 0.0, 0.0)
    angular_velocity_deg_s: float = 0.0
    real_scan: str | None = None


class MotionConfig(_Section):
    mode: Literal["static", "linear_velocity", "vibration", "rolling_shutter"] = "static"
    velocity_m_s: tuple[float, float, float] = (0.0, 0.0, 0.0)
    amplitude_m: float = Field(0.0, ge=0)
    exposures: int = Field(1, ge=1)
    frame_time_s: float = Field(1.0 / 30.0, gt=0)


class ViewpointConfig(_Section):
    mode: Literal["icosphere", "random"] = "icosphere"
    subdivision: int = Field(0, ge=0, le=4)
    count: int = Field(12, ge=1)
    radius_range_m: tuple[float, float] = (1.0, 2.0)
    cap_angle_deg: float = Field(180.0, gt=0, le=180)
    target_m: tuple[float, float, float] | None = None


class BenchmarkConfig(_Section):
    distances_m: list[float] = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0]
    tilts_deg: list[float] = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0]
    seeds: int = Field(5, ge=1)
    wall_size_m: float = Field(40.0, gt=0)
    wall_albedo: float = Field(0.8, ge=0, le=1)
    error_models: dict[str, list[float]] = {}
    pdf: bool = False


class OutputConfig(_Section):
    out_dir: str = Field(default_factory=lambda: os.getenv("SLSIM_OUT", "out"))
    jobs: int = Field(default_factory=lambda: int(os.getenv("SLSIM_JOBS", "1")), ge=1)
    write_ir: bool = True
    write_disparity: bool = False


class SimConfig(_Section):
    seed: int = 0
    sensor: SensorConfig = SensorConfig()
    render: RenderConfig = RenderConfig()
    noise: NoiseSection = NoiseSection()
    matcher: MatcherConfig = MatcherConfig()
    post: PostConfig = PostConfig()
    scene: SceneConfig = SceneConfig()
    background: BackgroundConfig = BackgroundConfig()
    motion: MotionConfig = MotionConfig()
    viewpoints: ViewpointConfig = ViewpointConfig()
    benchmark: BenchmarkConfig = BenchmarkConfig()
    output: OutputConfig = Field(default_factory=OutputConfig)

    _source_dir: Path = PrivateAttr(default_factory=Path.cwd)

    def resolve(self, relative: str) -> Path:
        """Paths in the file are relative to the file's directory."""
        p = Path(relative).expanduser()
        return p if p.is_absolute() else self._source_dir / p


# ─── Load / dump ──────────────────────────────────────────────────────────────

def load_config(path=None, overrides: dict | None = None) -> SimConfig:
    """Read a TOML config (or the defaults when `path` is None) and validate it."""
    data: dict = {}
    source_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise AssetNotFoundError(path, "config file")
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
        source_dir = path.resolve().parent
    for dotted, value in (overrides or {}).items():
        _set_dotted(data, dotted, value)
    try:
        cfg = SimConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"{where}: {first['msg']} ({e.error_count()} error(s) in total)") from e
    cfg._source_dir = source_dir
    return cfg


def _set_dotted(data: dict, dotted: str, value):
    node = data
    *parents, leaf = dotted.split(".")
    for key in parents:
        node = node.setdefault(key, {})
    node[leaf] = value


def default_config_toml() -> str:
    return tomli_w.dumps(SimConfig().model_dump(mode="json", exclude_none=True))


def write_default_config(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(default_config_toml(), encoding="utf-8")
    return path


def config_hash(cfg: SimConfig) -> str:
    """sha256 of the canonical JSON dump; output/worker settings are excluded."""
    payload = cfg.model_dump(mode="json", exclude={"output"})
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def env_log_level() -> str:
    return os.getenv("SLSIM_LOG_LEVEL", "INFO").upper()


# ─── Builders ─────────────────────────────────────────────────────────────────

def build_sensor(cfg: SimConfig) -> SensorModel:
    s = cfg.sensor
    try:
        camera = Intrinsics(**s.camera.model_dump())
        if s.pattern_path:
            pattern = load_pattern(cfg.resolve(s.pattern_path))
        else:
            pattern = generate_dot_pattern(s.pattern_side_px, s.pattern_density, s.pattern_seed, s.window_size_px)
        side = pattern.side_px
        focal = s.projector_focal_px * side / s.pattern_side_px
        centre = (side - 1) / 2.0
        projector = Intrinsics(focal, focal, centre, centre, side, side)
        return SensorModel(
            camera=camera,
            projector=projector,
            baseline_m=s.baseline_m,
            pattern=pattern,
            depth_range_m=s.depth_range_m,
            orientation=s.orientation,
            window_size_px=s.window_size_px,
            subpixel_denominator=s.subpixel_denominator,
            ir_bit_depth=s.ir_bit_depth,
            projector_side=s.projector_side,
            reference_factor=s.reference_factor,
        )
    except ValueError as e:
        raise ConfigError(f"sensor: {e}") from e


def build_scene(cfg: SimConfig) -> Scene:
    """Objects from the config plus lights. Clutter and floor are added by the pipeline."""
    instances = []
    try:
        for i, obj in enumerate(cfg.scene.objects):
            mesh = _object_mesh(cfg, obj)
            if obj.normal_map:
                nmap = bumpy_normal_map(seed=cfg.seed + i) if obj.normal_map == "bumpy" \
                    else load_normal_map(cfg.resolve(obj.normal_map))
                mesh = mesh.with_normal_map(nmap, obj.normal_map_tile_m)
            material = _material(cfg, obj.material)
            pose = Pose.from_euler(obj.rotation_deg, obj.position_m)
            instances.append(Instance(mesh, pose, material, role=obj.role, name=mesh.name))
        lights = [Light(lc.kind, lc.vector, lc.power) for lc in cfg.render.lights]
        return Scene(tuple(instances), cfg.render.ambient_light, tuple(lights))
    except ValueError as e:
        raise ConfigError(f"scene: {e}") from e


def _object_mesh(cfg: SimConfig, obj: ObjectConfig):
    if obj.mesh is not None:
        return load_mesh(cfg.resolve(obj.mesh), obj.format, obj.scale)
    size = list(obj.size_m)
    if obj.primitive == "box":
        return make_box((size * 3)[:3])
    if obj.primitive == "sphere":
        return make_sphere(size[0], subdivisions=3)
    if obj.primitive == "cylinder":
        return make_cylinder(size[0], size[1] if len(size) > 1 else 2 * size[0])
    return make_plane(size[0], size[1] if len(size) > 1 else size[0])


def _material(cfg: SimConfig, mc: MaterialConfig) -> Material:
    albedo = mc.albedo
    if mc.albedo_texture:
        albedo = np.clip(image_io.read_gray(cfg.resolve(mc.albedo_texture)), 0.0, 1.0)
    return Material(albedo, mc.reflectance_ratio, mc.roughness)


def render_settings(cfg: SimConfig, seed: int, jobs: int = 1) -> RenderSettings:
    return RenderSettings(cfg.render.pixel_jitter, cfg.render.projector_power, seed=seed, jobs=jobs)


def noise_config(cfg: SimConfig, seed: int) -> NoiseConfig:
    n = cfg.noise
    return NoiseConfig(n.gaussian_sigma, n.grain_sigma, n.scratch_count, seed=seed, distortion=n.distortion)


def match_settings(cfg: SimConfig, jobs: int = 1) -> MatchSettings:
    return MatchSettings(**cfg.matcher.model_dump(), jobs=jobs)


def post_settings(cfg: SimConfig) -> PostSettings:
    return PostSettings(**cfg.post.model_dump())


def motion_spec(cfg: SimConfig, seed: int) -> MotionSpec:
    m = cfg.motion
    return MotionSpec(m.mode, m.velocity_m_s, m.amplitude_m, m.exposures, m.frame_time_s, seed)
