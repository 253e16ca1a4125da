"""
benchmark.py — Flat-wall depth error
--------------------------------------
For every (distance, tilt, seed) cell:
  1. build a wall facing the camera, tilted about the camera's vertical axis
  2. run the full frame pipeline up to trimming (no hole filling)
  3. compare valid depths with the analytic plane depth at each pixel centre

Reported per cell: valid fraction (over non-border pixels), std / mean of
the residuals in mm, and the residual std in 10 radial annuli about the
principal point. Exported as CSV plus three SVG panels (error vs distance,
tilt and radial distance), optionally a PDF summary.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from reportlab.graphics import renderSVG
from reportlab.graphics.charts.legends import LineLegend
from reportlab.graphics.charts.lineplots import LinePlot
from reportlab.graphics.shapes import Drawing, String
from reportlab.lib import colors

from src.accel import build_accelerator
from src.capture_noise import NoiseConfig
from src.capture_renderer import RenderSettings
from src.errors import ReportWriteError, SensorRangeError
from src.geometry import Pose
from src.pipeline import frame_seeds, run_frame
from src.scene import Instance, Material, Scene, make_plane
from src.sensor_model import SensorModel
from src.stereo_matcher import MatchSettings, quantization_step_m

log = logging.getLogger(__name__)

RADIAL_BINS = 10
CSV_COLUMNS = ["distance_m", "tilt_deg", "seed", "valid_fraction", "std_error_mm"] + \
              [f"bin{i}" for i in range(RADIAL_BINS)]
PANEL_COLORS = [colors.HexColor(c) for c in ("#7c6af7", "#e4572e", "#17bebb", "#ffc914", "#76b041", "#6b7280")]


# ─── Types ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class BenchmarkRecord:
    distance_m: float
    tilt_deg: float
    seed: int
    valid_fraction: float
    std_error_mm: float
    mean_error_mm: float
    radial_std_mm: tuple[float, ...]

    def __post_init__(self):
        if not 0.0 <= self.valid_fraction <= 1.0:
            raise ValueError(f"valid_fraction {self.valid_fraction} outside [0, 1]")
        if self.std_error_mm < 0:
            raise ValueError("std_error_mm must be >= 0")


@dataclass
class BenchmarkReport:
    records: list[BenchmarkRecord] = field(default_factory=list)
    radial_edges_px: tuple[float, ...] = ()
    error_models: dict[str, list[float]] = field(default_factory=dict)

    def mean_std_by(self, key: str, **where) -> dict[float, float]:
        """Mean std_error_mm grouped by `key` over records matching `where` (NaN-free)."""
        groups: dict[float, list[float]] = {}
        for r in self.records:
            if any(getattr(r, k) != v for k, v in where.items()):
                continue
            if np.isfinite(r.std_error_mm):
                groups.setdefault(getattr(r, key), []).append(r.std_error_mm)
        return {k: float(np.mean(v)) for k, v in sorted(groups.items())}

    def mean_valid_by(self, key: str, **where) -> dict[float, float]:
        groups: dict[float, list[float]] = {}
        for r in self.records:
            if all(getattr(r, k) == v for k, v in where.items()):
                groups.setdefault(getattr(r, key), []).append(r.valid_fraction)
        return {k: float(np.mean(v)) for k, v in sorted(groups.items())}

    def radial_profile(self, **where) -> np.ndarray:
        rows = [r.radial_std_mm for r in self.records if all(getattr(r, k) == v for k, v in where.items())]
        if not rows:
            return np.full(RADIAL_BINS, np.nan)
        arr = np.array(rows, dtype=np.float64)
        with np.errstate(invalid="ignore"):
            counts = np.isfinite(arr).sum(axis=0)
            sums = np.nansum(arr, axis=0)
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


@dataclass(frozen=True)
class BenchmarkSettings:
    render: RenderSettings = RenderSettings()
    noise: NoiseConfig = NoiseConfig()
    match: MatchSettings = MatchSettings()
    wall_size_m: float = 40.0
    wall_albedo: float = 0.8
    ambient_light: float = 0.0
    base_seed: int = 0
    jobs: int = 1


# ─── Geometry ─────────────────────────────────────────────────────────────────

def wall_scene(distance_m: float, tilt_deg: float, size_m: float = 40.0, albedo: float = 0.8,
               ambient: float = 0.0) -> Scene:
    """Square wall centred on the optical axis at `distance_m`, rotated `tilt_deg` about camera y."""
    pose = Pose.from_euler((0.0, tilt_deg, 0.0), (0.0, 0.0, distance_m))
    wall = Instance(make_plane(size_m, size_m), pose, Material(albedo=albedo), role="target", name="wall")
    return Scene((wall,), ambient_light=ambient)


def wall_depth(sensor: SensorModel, distance_m: float, tilt_deg: float) -> np.ndarray:
    """Analytic z-depth of the tilted wall at every pixel centre: z = D·cos t / (x_n·sin t + cos t)."""
    cam = sensor.camera
    t = np.radians(tilt_deg)
    xn = (np.arange(cam.width, dtype=np.float64) - cam.cx) / cam.fx
    denom = xn * np.sin(t) + np.cos(t)
    with np.errstate(divide="ignore"):
        z = np.where(denom > 1e-12, distance_m * np.cos(t) / np.where(denom > 1e-12, denom, 1.0), np.inf)
    return np.broadcast_to(z, (cam.height, cam.width)).copy()


def quantization_step_mm(sensor: SensorModel, z_m: float) -> float:
    return 1000.0 * quantization_step_m(sensor, z_m)


def radial_edges(sensor: SensorModel) -> np.ndarray:
    cam = sensor.camera
    corners = np.array([[0, 0], [cam.width - 1, 0], [0, cam.height - 1], [cam.width - 1, cam.height - 1]])
    r_max = float(np.max(np.hypot(corners[:, 0] - cam.cx, corners[:, 1] - cam.cy)))
    return np.linspace(0.0, r_max, RADIAL_BINS + 1)


# ─── Evaluation ───────────────────────────────────────────────────────────────

def validate_grid(sensor: SensorModel, distances, tilts, seeds: int):
    z_min, z_max = sensor.depth_range_m
    if not distances or not tilts:
        raise SensorRangeError("benchmark needs at least one distance and one tilt")
    for d in distances:
        if not z_min <= d <= z_max:
            raise SensorRangeError(f"distance {d} m outside the sensor range [{z_min}, {z_max}] m")
    for t in tilts:
        if not 0.0 <= t < 90.0:
            raise SensorRangeError(f"tilt {t} deg outside [0, 90)")
    if seeds < 1:
        raise SensorRangeError("seeds must be >= 1")


def evaluate_depth(sensor: SensorModel, depth, distance_m: float, tilt_deg: float, seed: int) -> BenchmarkRecord:
    """Residual statistics of one reconstructed frame against the analytic wall."""
    cam = sensor.camera
    half = sensor.window_size_px // 2
    interior = np.zeros(cam.shape, dtype=bool)
    interior[half:cam.height - half, half:cam.width - half] = True

    truth = wall_depth(sensor, distance_m, tilt_deg)
    valid = depth.valid & interior
    residual_mm = (depth.values[valid] - truth[valid]) * 1000.0
    if residual_mm.size >= 2:
        std, mean = float(np.std(residual_mm)), float(np.mean(residual_mm))
    else:
        std, mean = float("nan"), float("nan")

    v, u = np.nonzero(valid)
    radius = np.hypot(u - cam.cx, v - cam.cy)
    bins = np.clip(np.digitize(radius, radial_edges(sensor)) - 1, 0, RADIAL_BINS - 1)
    radial = []
    for b in range(RADIAL_BINS):
        sel = residual_mm[bins == b]
        radial.append(float(np.std(sel)) if sel.size >= 2 else float("nan"))

    return BenchmarkRecord(distance_m, tilt_deg, seed, float(valid.sum() / interior.sum()), std, mean, tuple(radial))


def run_cell(sensor: SensorModel, distance_m: float, tilt_deg: float, seed: int,
             settings: BenchmarkSettings) -> BenchmarkRecord:
    render_seed, noise_seed, _ = frame_seeds(settings.base_seed, seed)
    scene = wall_scene(distance_m, tilt_deg, settings.wall_size_m, settings.wall_albedo, settings.ambient_light)
    accel = build_accelerator(scene)
    frame = run_frame(
        accel, sensor, Pose.identity(),
        render=_reseeded(settings.render, render_seed),
        noise=_reseeded(settings.noise, noise_seed),
        match=settings.match,
        post=None,
    )
    record = evaluate_depth(sensor, frame.depth, distance_m, tilt_deg, seed)
    log.debug(f"cell d={distance_m} t={tilt_deg} s={seed}: valid {record.valid_fraction:.3f}, "
              f"std {record.std_error_mm:.2f} mm")
    return record


def _reseeded(settings, seed):
    return replace(settings, seed=seed)


def run_flat_wall(sensor: SensorModel, distances, tilts, seeds: int,
                  settings: BenchmarkSettings | None = None) -> BenchmarkReport:
    """Evaluate every (distance, tilt, seed) cell; the grid is validated before any rendering."""
    settings = settings or BenchmarkSettings()
    distances, tilts = [float(d) for d in distances], [float(t) for t in tilts]
    validate_grid(sensor, distances, tilts, seeds)
    _ = sensor.reference_image   # build the cached reference once, before the pool

    cells = [(d, t, s) for d in distances for t in tilts for s in range(seeds)]
    log.info(f"Benchmark: {len(distances)} distances x {len(tilts)} tilts x {seeds} seeds "
             f"= {len(cells)} cells on {settings.jobs} workers")
    start = time.perf_counter()
    if settings.jobs == 1:
        records = [run_cell(sensor, d, t, s, settings) for d, t, s in cells]
    else:
        with ThreadPoolExecutor(max_workers=settings.jobs) as pool:
            records = list(pool.map(lambda c: run_cell(sensor, *c, settings), cells))
    log.info(f"Benchmark finished in {time.perf_counter() - start:.1f}s")
    return BenchmarkReport(records, tuple(radial_edges(sensor)))


# ─── Export ───────────────────────────────────────────────────────────────────

def export_report(report: BenchmarkReport, out_dir, pdf: bool = False) -> list[Path]:
    """Write report.csv and panel_{distance,tilt,radial}.svg (and report.pdf). IO failures name the path."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportWriteError(out_dir, e.strerror or str(e)) from e

    written = [write_csv(report, out_dir / "report.csv")]
    panels = build_panels(report)
    for name, drawing in panels.items():
        path = out_dir / f"panel_{name}.svg"
        try:
            renderSVG.drawToFile(drawing, str(path))
        except OSError as e:
            raise ReportWriteError(path, e.strerror or str(e)) from e
        written.append(path)
    if pdf:
        from src.pdf_gen import write_benchmark_pdf
        written.append(write_benchmark_pdf(report, out_dir / "report.pdf", panels))
    log.info(f"Report: {len(report.records)} records → {out_dir}")
    return written


def write_csv(report: BenchmarkReport, path: Path) -> Path:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for r in report.records:
                writer.writerow([r.distance_m, r.tilt_deg, r.seed, r.valid_fraction, _cell(r.std_error_mm)]
                                + [_cell(b) for b in r.radial_std_mm])
    except OSError as e:
        raise ReportWriteError(path, e.strerror or str(e)) from e
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _cell(value: float) -> str:
    return "" if not np.isfinite(value) else repr(float(value))


def build_panels(report: BenchmarkReport) -> dict[str, Drawing]:
    """A: std error vs distance (mm), B: vs tilt (deg), C: vs radial distance (px)."""
    panels = {}

    by_distance = report.mean_std_by("distance_m", tilt_deg=_lowest(report, "tilt_deg"))
    series = {"simulated": [(d * 1000.0, s) for d, s in by_distance.items()]}
    for name, coeffs in report.error_models.items():
        xs = np.linspace(min(by_distance, default=1.0), max(by_distance, default=4.0), 32)
        series[name] = [(x * 1000.0, float(np.polyval(list(reversed(coeffs)), x))) for x in xs]
    panels["distance"] = _line_panel("A: std depth error vs distance", "distance (mm)", series)

    tilt_series = {}
    for d in sorted({r.distance_m for r in report.records}):
        tilt_series[f"{d:g} m"] = list(report.mean_std_by("tilt_deg", distance_m=d).items())
    panels["tilt"] = _line_panel("B: std depth error vs tilt", "tilt (deg)", tilt_series)

    edges = np.asarray(report.radial_edges_px) if report.radial_edges_px else np.linspace(0, 1, RADIAL_BINS + 1)
    centres = 0.5 * (edges[:-1] + edges[1:])
    radial_series = {}
    for d in sorted({r.distance_m for r in report.records}):
        prof = report.radial_profile(distance_m=d, tilt_deg=_lowest(report, "tilt_deg"))
        radial_series[f"{d:g} m"] = [(float(c), float(p)) for c, p in zip(centres, prof)]
    panels["radial"] = _line_panel("C: std depth error vs radial distance", "radial distance (px)", radial_series)
    return panels


def _lowest(report: BenchmarkReport, key: str):
    values = [getattr(r, key) for r in report.records]
    return min(values) if values else 0.0


def _line_panel(title: str, x_label: str, series: dict[str, list[tuple[float, float]]]) -> Drawing:
    drawing = Drawing(420, 260)
    drawing.add(String(210, 244, title, fontName="Helvetica-Bold", fontSize=11, textAnchor="middle"))
    clean = {k: [(float(x), float(y)) for x, y in pts if np.isfinite(x) and np.isfinite(y)]
             for k, pts in series.items()}
    clean = {k: v for k, v in clean.items() if v}
    if not clean:
        drawing.add(String(210, 130, "no data", fontName="Helvetica", fontSize=10, textAnchor="middle"))
        return drawing

    plot = LinePlot()
    plot.x, plot.y, plot.width, plot.height = 50, 40, 270, 180
    plot.data = list(clean.values())
    for i in range(len(clean)):
        plot.lines[i].strokeColor = PANEL_COLORS[i % len(PANEL_COLORS)]
        plot.lines[i].strokeWidth = 1.5
    plot.yValueAxis.valueMin = 0
    xs = [x for pts in clean.values() for x, _ in pts]
    ys = [y for pts in clean.values() for _, y in pts]
    if min(xs) == max(xs):
        plot.xValueAxis.valueMin, plot.xValueAxis.valueMax = min(xs) - 1.0, max(xs) + 1.0
    if max(ys) <= 0:
        plot.yValueAxis.valueMax = 1.0
    plot.xValueAxis.labelTextFormat = "%g"
    plot.yValueAxis.labelTextFormat = "%g"
    drawing.add(plot)
    drawing.add(String(185, 8, x_label, fontName="Helvetica", fontSize=9, textAnchor="middle"))
    drawing.add(String(12, 130, "std error (mm)", fontName="Helvetica", fontSize=9))

    legend = LineLegend()
    legend.x, legend.y = 330, 220
    legend.fontSize = 8
    legend.colorNamePairs = [(PANEL_COLORS[i % len(PANEL_COLORS)], name) for i, name in enumerate(clean)]
    drawing.add(legend)
    return drawing
