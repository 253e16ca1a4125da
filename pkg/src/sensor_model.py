"""
sensor_model.py — The simulated device
----------------------------------------
Camera + projector intrinsics, baseline, dot pattern, depth range and
matching parameters. Also owns the two pattern images the pipeline needs:
  1. the square projector pattern ("light cookie")
  2. the camera-resolution reference image, i.e. the pattern as the camera
     sees it on a fronto-parallel plane at the reference distance

The projector sits at `projector_side · baseline` along the camera's x axis
(horizontal) or y axis (vertical), with the camera's orientation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from src import image_io

log = logging.getLogger(__name__)

ORIENTATIONS = ("horizontal", "vertical")


# ─── Intrinsics ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be > 0 (fx={self.fx}, fy={self.fy})")
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be at least 1x1")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")
        if not all(math.isfinite(c) for c in self.distortion):
            raise ValueError("distortion coefficients must be finite")

    @property
    def distortion(self) -> tuple[float, float, float, float, float]:
        return (self.k1, self.k2, self.k3, self.p1, self.p2)

    @property
    def has_distortion(self) -> bool:
        return any(c != 0.0 for c in self.distortion)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def scaled(self, factor: int) -> Intrinsics:
        """Same field of view sampled `factor` times more densely."""
        return replace(
            self,
            fx=self.fx * factor, fy=self.fy * factor,
            cx=(self.cx + 0.5) * factor - 0.5, cy=(self.cy + 0.5) * factor - 0.5,
            width=self.width * factor, height=self.height * factor,
        )

    def without_distortion(self) -> Intrinsics:
        return replace(self, k1=0.0, k2=0.0, k3=0.0, p1=0.0, p2=0.0)


# ─── Pattern ──────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Pattern:
    image: np.ndarray

    def __post_init__(self):
        img = np.array(self.image, dtype=np.float64)
        if img.ndim != 2 or img.shape[0] != img.shape[1] or img.size == 0:
            raise ValueError(f"pattern must be a non-empty square grid, got shape {img.shape}")
        if img.min() < 0.0 or img.max() > 1.0:
            raise ValueError("pattern values must lie in [0, 1]")
        img.setflags(write=False)
        object.__setattr__(self, "image", img)

    @property
    def side_px(self) -> int:
        return self.image.shape[0]

    def mirrored(self) -> Pattern:
        return Pattern(self.image[:, ::-1])


def pad_pattern_square(raw: np.ndarray) -> Pattern:
    """Center `raw` on a zero-intensity square canvas of side max(width, height)."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.size == 0:
        raise ValueError("pattern image must be a non-empty 2D grid")
    h, w = raw.shape
    side = max(h, w)
    canvas = np.zeros((side, side))
    top, left = (side - h) // 2, (side - w) // 2
    canvas[top:top + h, left:left + w] = raw
    return Pattern(canvas)


def generate_dot_pattern(side_px: int, dot_density: float, seed: int, window_size: int = 9,
                         max_passes: int = 8) -> Pattern:
    """
    Pseudo-random binary dot pattern.

    Exactly round(density · side²) dots are drawn from a seeded generator.
    Afterwards, horizontal strips of height `window_size` are scanned for
    repeated window-sized blocks at different columns; each repeat gets one
    extra dot at a random spot inside it. Repeats that survive `max_passes`
    are left (best effort).
    """
    if side_px < 64:
        raise ValueError(f"side_px must be >= 64, got {side_px}")
    if not 0.0 < dot_density < 0.5:
        raise ValueError(f"dot_density must lie in (0, 0.5), got {dot_density}")
    rng = np.random.default_rng(seed)
    n = side_px * side_px
    lit = rng.choice(n, size=int(round(dot_density * n)), replace=False)
    img = np.zeros(n, dtype=bool)
    img[lit] = True
    img = img.reshape(side_px, side_px)

    for attempt in range(max_passes):
        repeats = _repeated_blocks(img, window_size)
        if not repeats:
            break
        for y, x in repeats:
            dy, dx = rng.integers(0, window_size, size=2)
            img[y + dy, x + dx] = True
        log.debug(f"dot pattern pass {attempt + 1}: broke {len(repeats)} repeated blocks")
    return Pattern(img.astype(np.float64))


def _repeated_blocks(img: np.ndarray, w: int) -> list[tuple[int, int]]:
    """Top-left corners of blocks that repeat an earlier block in the same strip."""
    packed = np.packbits(sliding_window_view(img, (w, w)).reshape(img.shape[0] - w + 1, img.shape[1] - w + 1, -1),
                         axis=-1)
    repeats = []
    for y in range(packed.shape[0]):
        seen = set()
        for x in range(packed.shape[1]):
            key = packed[y, x].tobytes()
            if key in seen:
                repeats.append((y, x))
            else:
                seen.add(key)
    return repeats


def load_pattern(path) -> Pattern:
    """8/16-bit grayscale pattern image, padded square."""
    return pad_pattern_square(image_io.read_gray(path))


# ─── Sensor ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SensorModel:
    camera: Intrinsics
    projector: Intrinsics
    baseline_m: float
    pattern: Pattern
    depth_range_m: tuple[float, float]
    orientation: str = "horizontal"
    window_size_px: int = 9
    subpixel_denominator: int = 8
    ir_bit_depth: int = 10
    projector_side: int = -1
    reference_factor: float = 2.0
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        z_min, z_max = self.depth_range_m
        if self.baseline_m <= 0:
            raise ValueError(f"baseline_m must be > 0, got {self.baseline_m}")
        if not 0 < z_min < z_max:
            raise ValueError(f"depth range must satisfy 0 < z_min < z_max, got {self.depth_range_m}")
        if self.window_size_px < 3 or self.window_size_px % 2 == 0:
            raise ValueError(f"window_size_px must be odd and >= 3, got {self.window_size_px}")
        if self.subpixel_denominator < 1:
            raise ValueError("subpixel_denominator must be >= 1")
        if not 1 <= self.ir_bit_depth <= 16:
            raise ValueError("ir_bit_depth must lie in [1, 16]")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}")
        if self.projector_side not in (-1, 1):
            raise ValueError("projector_side must be -1 or +1")
        if (self.projector.width, self.projector.height) != (self.pattern.side_px, self.pattern.side_px):
            raise ValueError(
                f"projector resolution {self.projector.width}x{self.projector.height} "
                f"does not match pattern side {self.pattern.side_px}"
            )
        if self.reference_factor <= 0:
            raise ValueError("reference_factor must be > 0")
        object.__setattr__(self, "depth_range_m", (float(z_min), float(z_max)))

    # ── geometry ─────────────────────────────────────────────────────────────

    @property
    def focal_px(self) -> float:
        """f along the stereo axis."""
        return self.camera.fx if self.orientation == "horizontal" else self.camera.fy

    @property
    def fb(self) -> float:
        return self.focal_px * self.baseline_m

    @property
    def disparity_range(self) -> tuple[float, float]:
        z_min, z_max = self.depth_range_m
        return self.fb / z_max, self.fb / z_min

    @property
    def reference_disparity(self) -> int:
        return max(1, int(round(self.fb / (self.reference_factor * self.depth_range_m[0]))))

    @property
    def reference_depth_m(self) -> float:
        return self.fb / self.reference_disparity

    @property
    def offset_range(self) -> tuple[int, int]:
        """Integer capture-vs-reference offsets that can land inside the disparity range."""
        d_min, d_max = self.disparity_range
        d_ref = self.reference_disparity
        return math.ceil(d_min - d_ref - 1e-9), math.floor(d_max - d_ref + 1e-9)

    @property
    def projector_position(self) -> np.ndarray:
        """Projector centre in the camera frame (meters)."""
        pos = np.zeros(3)
        pos[0 if self.orientation == "horizontal" else 1] = self.projector_side * self.baseline_m
        return pos

    @property
    def quantization_levels(self) -> int:
        return 2 ** self.ir_bit_depth

    def project_to_projector(self, points_cam: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Camera-frame points → projector pixel (u, v) and projector-frame depth."""
        rel = np.asarray(points_cam, dtype=np.float64) - self.projector_position
        z = rel[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.projector.fx * rel[..., 0] / z + self.projector.cx
            v = self.projector.fy * rel[..., 1] / z + self.projector.cy
        return u, v, z

    def sample_pattern(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Bilinear pattern lookup at projector pixel coordinates; 0 outside the pattern."""
        u = np.nan_to_num(np.asarray(u, dtype=np.float64), nan=-1e9, posinf=-1e9, neginf=-1e9)
        v = np.nan_to_num(np.asarray(v, dtype=np.float64), nan=-1e9, posinf=-1e9, neginf=-1e9)
        return ndimage.map_coordinates(self.pattern.image, [v.ravel(), u.ravel()], order=1,
                                       mode="constant", cval=0.0).reshape(u.shape)

    # ── derived variants ─────────────────────────────────────────────────────

    def with_camera(self, camera: Intrinsics) -> SensorModel:
        return replace(self, camera=camera)

    def mirrored(self) -> SensorModel:
        """Projector on the other side with a left-right flipped pattern."""
        proj = replace(self.projector, cx=self.projector.width - 1 - self.projector.cx)
        return replace(self, projector=proj, pattern=self.pattern.mirrored(), projector_side=-self.projector_side)

    def summary(self) -> dict:
        d_min, d_max = self.disparity_range
        return {
            "focal_px": self.focal_px,
            "baseline_m": self.baseline_m,
            "depth_range_m": list(self.depth_range_m),
            "disparity_range_px": [d_min, d_max],
            "reference_disparity_px": self.reference_disparity,
            "reference_depth_m": self.reference_depth_m,
            "offset_range_px": list(self.offset_range),
        }

    @property
    def reference_image(self) -> np.ndarray:
        """Cached camera-resolution reference image (read-only)."""
        ref = self._cache.get("reference")
        if ref is None:
            ref = render_reference_image(self)
            ref.setflags(write=False)
            self._cache["reference"] = ref
        return ref


def render_reference_image(sensor: SensorModel) -> np.ndarray:
    """
    The pattern as the (undistorted) camera sees it on the fronto-parallel
    plane z = reference_depth_m, sampled at pixel centres.
    """
    cam = sensor.camera
    z = sensor.reference_depth_m
    v, u = np.mgrid[0:cam.height, 0:cam.width].astype(np.float64)
    points = np.stack([(u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, np.full_like(u, z)], axis=-1)
    pu, pv, _ = sensor.project_to_projector(points)
    ref = sensor.sample_pattern(pu, pv)
    log.debug(f"reference image at z_ref={z:.4f} m (d_ref={sensor.reference_disparity} px)")
    return ref
