"""
depth_post.py — Device-style depth post-processing
----------------------------------------------------
trim → median smooth over valid neighbours → optional scanline hole fill.
All three are pure functions of a DepthMap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.sensor_model import SensorModel
from src.stereo_matcher import DepthMap

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PostSettings:
    kernel_px: int = 3
    max_gap_px: int = 6
    fill_holes: bool = True

    def __post_init__(self):
        if self.kernel_px < 1 or self.kernel_px % 2 == 0:
            raise ValueError(f"kernel_px must be odd and >= 1, got {self.kernel_px}")
        if self.max_gap_px < 0:
            raise ValueError("max_gap_px must be >= 0")


def trim(depth: DepthMap, sensor: SensorModel) -> DepthMap:
    z_min, z_max = sensor.depth_range_m
    with np.errstate(invalid="ignore"):
        keep = depth.valid & (depth.values >= z_min) & (depth.values <= z_max)
    return DepthMap(depth.values, keep)


def smooth(depth: DepthMap, kernel_px: int) -> DepthMap:
    """
    Median over the valid pixels of each kernel window, evaluated at valid
    pixels only. An even count takes the lower median, so every output value
    is one of the input values.
    """
    if kernel_px < 1 or kernel_px % 2 == 0:
        raise ValueError(f"kernel_px must be odd and >= 1, got {kernel_px}")
    if kernel_px == 1 or not depth.valid.any():
        return DepthMap(depth.values.copy(), depth.valid.copy())
    half = kernel_px // 2
    padded = np.pad(np.where(depth.valid, depth.values, np.nan), half, mode="constant", constant_values=np.nan)
    windows = sliding_window_view(padded, (kernel_px, kernel_px)).reshape(*depth.shape, -1)
    ordered = np.sort(windows, axis=-1)          # NaN sorts last
    count = np.isfinite(ordered).sum(axis=-1)
    pick = np.maximum(count - 1, 0) // 2
    median = np.take_along_axis(ordered, pick[..., None], axis=-1)[..., 0]
    return DepthMap(np.where(depth.valid, median, np.nan), depth.valid.copy())


def fill_holes(depth: DepthMap, max_gap_px: int) -> DepthMap:
    """
    Fill invalid runs shorter than `max_gap_px` along each row by linear
    interpolation between the bounding valid pixels. Runs touching the image
    border stay invalid; valid pixels are never modified.
    """
    if max_gap_px < 0:
        raise ValueError("max_gap_px must be >= 0")
    values = depth.values.copy()
    valid = depth.valid.copy()
    if max_gap_px == 0:
        return DepthMap(values, valid)

    filled = 0
    for y in range(values.shape[0]):
        row_valid = depth.valid[y]
        idx = np.flatnonzero(row_valid)
        if len(idx) < 2:
            continue
        gaps = np.diff(idx) - 1
        for k in np.flatnonzero((gaps > 0) & (gaps < max_gap_px)):
            a, b = idx[k], idx[k + 1]
            za, zb = depth.values[y, a], depth.values[y, b]
            t = np.arange(1, b - a) / (b - a)
            values[y, a + 1:b] = za + (zb - za) * t
            valid[y, a + 1:b] = True
            filled += b - a - 1
    log.debug(f"hole fill: {filled} pixels filled (max gap {max_gap_px})")
    return DepthMap(values, valid)


def postprocess(depth: DepthMap, sensor: SensorModel, settings: PostSettings) -> DepthMap:
    out = smooth(trim(depth, sensor), settings.kernel_px)
    if settings.fill_holes:
        out = fill_holes(out, settings.max_gap_px)
    return out
