"""
capture_noise.py — Imaging-sensor degradation
-----------------------------------------------
Turns the ideal render into what the IR sensor would actually read out:
  1. Brown–Conrady lens distortion (radial k1..k3, tangential p1, p2)
  2. multiplicative grain and lens scratches
  3. i.i.d. Gaussian read noise
  4. clamp + quantization to ir_bit_depth levels

All randomness is drawn from one SeedSequence per call.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from src.capture_renderer import IrCapture
from src.sensor_model import Intrinsics

log = logging.getLogger(__name__)

UNDISTORT_ITERATIONS = 50
UNDISTORT_TOL = 1e-12


@dataclass(frozen=True)
class NoiseConfig:
    gaussian_sigma: float = 0.01
    grain_sigma: float = 0.01
    scratch_count: int = 0
    seed: int = 0
    distortion: bool = True

    def __post_init__(self):
        if self.gaussian_sigma < 0 or self.grain_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.scratch_count < 0:
            raise ValueError("scratch_count must be >= 0")

    @classmethod
    def noiseless(cls, seed: int = 0) -> NoiseConfig:
        return cls(gaussian_sigma=0.0, grain_sigma=0.0, scratch_count=0, seed=seed, distortion=False)


# ─── Lens distortion ──────────────────────────────────────────────────────────

def _distort_normalized(x, y, intr: Intrinsics):
    k1, k2, k3, p1, p2 = intr.distortion
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return xd, yd


def distort_points(points: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """Ideal pixel positions (N, 2) as (u, v) → where the lens puts them."""
    pts = np.asarray(points, dtype=np.float64)
    x = (pts[..., 0] - intr.cx) / intr.fx
    y = (pts[..., 1] - intr.cy) / intr.fy
    xd, yd = _distort_normalized(x, y, intr)
    return np.stack([xd * intr.fx + intr.cx, yd * intr.fy + intr.cy], axis=-1)


def undistort_points(points: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """Inverse of distort_points by fixed-point iteration."""
    pts = np.asarray(points, dtype=np.float64)
    xd = (pts[..., 0] - intr.cx) / intr.fx
    yd = (pts[..., 1] - intr.cy) / intr.fy
    k1, k2, k3, p1, p2 = intr.distortion
    x, y = xd.copy(), yd.copy()
    for _ in range(UNDISTORT_ITERATIONS):
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        nx = (xd - dx) / radial
        ny = (yd - dy) / radial
        step = max(np.max(np.abs(nx - x), initial=0.0), np.max(np.abs(ny - y), initial=0.0))
        x, y = nx, ny
        if step < UNDISTORT_TOL:
            break
    return np.stack([x * intr.fx + intr.cx, y * intr.fy + intr.cy], axis=-1)


def apply_lens_distortion(capture: IrCapture, intr: Intrinsics) -> IrCapture:
    """
    Warp the capture through the lens: output pixel p shows the ideal image at
    undistort(p), bilinearly resampled. Sources outside the image give 0.
    """
    if not intr.has_distortion:
        return capture.with_intensities(capture.intensities.copy())
    img = capture.intensities
    h, w = img.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    src = undistort_points(np.stack([u, v], axis=-1), intr)
    su, sv = src[..., 0], src[..., 1]
    inside = (su >= 0) & (su <= w - 1) & (sv >= 0) & (sv <= h - 1)
    warped = ndimage.map_coordinates(img, [sv, su], order=1, mode="constant", cval=0.0)
    return capture.with_intensities(np.where(inside, warped, 0.0))


def distortion_is_monotone(intr: Intrinsics, samples: int = 4096) -> bool:
    """True when r ↦ r·(1 + k1 r² + k2 r⁴ + k3 r⁶) is strictly increasing out to the image corners."""
    corners = np.array([[0, 0], [intr.width - 1, 0], [0, intr.height - 1], [intr.width - 1, intr.height - 1]],
                       dtype=np.float64)
    r_max = np.max(np.hypot((corners[:, 0] - intr.cx) / intr.fx, (corners[:, 1] - intr.cy) / intr.fy))
    r = np.linspace(0.0, r_max, samples)
    r2 = r * r
    mapped = r * (1.0 + r2 * (intr.k1 + r2 * (intr.k2 + r2 * intr.k3)))
    return bool(np.all(np.diff(mapped) > 0))


# ─── Sensor noise ─────────────────────────────────────────────────────────────

def quantize(intensities: np.ndarray, bit_depth: int) -> np.ndarray:
    levels = 2 ** bit_depth - 1
    return np.round(np.clip(intensities, 0.0, 1.0) * levels) / levels


def apply_sensor_noise(capture: IrCapture, cfg: NoiseConfig, bit_depth: int = 10) -> IrCapture:
    """Grain → scratches → Gaussian read noise → clamp → quantize. Deterministic per cfg.seed."""
    grain_ss, scratch_ss, read_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    img = capture.intensities.astype(np.float64, copy=True)

    if cfg.grain_sigma > 0:
        img *= 1.0 + cfg.grain_sigma * _grain_field(img.shape, np.random.default_rng(grain_ss))
    if cfg.scratch_count > 0:
        img *= _scratch_mask(img.shape, cfg.scratch_count, np.random.default_rng(scratch_ss))
    if cfg.gaussian_sigma > 0:
        img += np.random.default_rng(read_ss).normal(0.0, cfg.gaussian_sigma, size=img.shape)

    return capture.with_intensities(quantize(img, bit_depth))


def _grain_field(shape, rng) -> np.ndarray:
    g = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=0.7)
    std = g.std()
    return g / std if std > 0 else g


def _scratch_mask(shape, count, rng) -> np.ndarray:
    """Attenuation factors along `count` random segments with a Gaussian cross profile."""
    h, w = shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = np.ones(shape)
    diag = np.hypot(h, w)
    for _ in range(count):
        x0, y0 = rng.uniform(0, w), rng.uniform(0, h)
        angle = rng.uniform(0, np.pi)
        length = rng.uniform(0.1, 0.5) * diag
        width = rng.uniform(1.0, 2.0)
        strength = rng.uniform(0.3, 0.8)
        dx, dy = np.cos(angle), np.sin(angle)
        # distance from each pixel to the segment
        s = np.clip((u - x0) * dx + (v - y0) * dy, 0.0, length)
        dist = np.hypot(u - (x0 + s * dx), v - (y0 + s * dy))
        mask *= 1.0 - strength * np.exp(-0.5 * (dist / (0.5 * width)) ** 2)
    log.debug(f"drew {count} lens scratches")
    return mask
