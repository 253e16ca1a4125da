"""
stereo_matcher.py — Capture vs reference block matching
---------------------------------------------------------
The projector acts as the second eye: each capture pixel's window is slid
along the epipolar axis of the stored reference image, the SAD-minimizing
offset is refined to a subpixel step, and disparity d = d_ref + offset is
turned into depth z = f·b / d.

  1. quantize both images to ir_bit_depth codes
  2. texture mask on the raw capture codes (window range >= 2 levels)
  3. contrast-normalize both images over the window, re-quantize to codes
  4. integer SAD over every admissible offset (numba, row-parallel)
  5. argmin (ties → smallest offset), uniqueness ratio, range boundary,
     parabolic / equiangular subpixel fit snapped to 1/denominator

Horizontal, projector on the left, is the canonical frame; other layouts
are transposed / flipped into it and back.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from src.capture_renderer import IrCapture
from src.errors import ResolutionMismatchError
from src.sensor_model import SensorModel

log = logging.getLogger(__name__)

SUBPIXEL_METHODS = {"parabolic": 0, "equiangular": 1}
NORMALIZED_CLIP = 4.0


# ─── Types ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class DisparityMap:
    values: np.ndarray     # px, NaN where invalid
    valid: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.valid.shape:
            raise ValueError("values and valid mask differ in shape")
        object.__setattr__(self, "values", np.where(self.valid, self.values, np.nan))

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())


@dataclass(frozen=True, eq=False)
class DepthMap:
    values: np.ndarray     # m, NaN where invalid
    valid: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.valid.shape:
            raise ValueError("values and valid mask differ in shape")
        valid = np.asarray(self.valid, dtype=bool) & np.isfinite(self.values)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "values", np.where(valid, self.values, np.nan))

    @classmethod
    def empty(cls, shape) -> DepthMap:
        return cls(np.full(shape, np.nan), np.zeros(shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())


@dataclass(frozen=True)
class MatchSettings:
    uniqueness_ratio: float = 0.8
    subpixel_method: str = "parabolic"
    contrast_floor: float = 0.004
    reject_range_boundary: bool = True
    jobs: int = 1
    rows_per_chunk: int = 16

    def __post_init__(self):
        if self.subpixel_method not in SUBPIXEL_METHODS:
            raise ValueError(f"subpixel_method must be one of {tuple(SUBPIXEL_METHODS)}")
        if not 0.0 < self.uniqueness_ratio <= 1.0:
            raise ValueError("uniqueness_ratio must lie in (0, 1]")
        if self.contrast_floor <= 0:
            raise ValueError("contrast_floor must be > 0")


# ─── Cost and selection ───────────────────────────────────────────────────────

def sad_cost(I_s: np.ndarray, I_t: np.ndarray, x: int, y: int, u: int, v: int, w: int):
    """Σ |I_s(x+i, y+j) − I_t(x+u+i, y+v+j)| over the centred w×w window."""
    half = w // 2
    if not (_inside(I_s, x, y, half) and _inside(I_t, x + u, y + v, half)):
        raise ValueError(f"window of size {w} at ({x}, {y}) offset ({u}, {v}) leaves the image")
    a = I_s[y - half:y + half + 1, x - half:x + half + 1]
    b = I_t[y + v - half:y + v + half + 1, x + u - half:x + u + half + 1]
    if np.issubdtype(a.dtype, np.integer) and np.issubdtype(b.dtype, np.integer):
        return int(np.abs(a.astype(np.int64) - b.astype(np.int64)).sum())
    return float(np.abs(a.astype(np.float64) - b.astype(np.float64)).sum())


def _inside(img, x, y, half) -> bool:
    h, w = img.shape
    return half <= x < w - half and half <= y < h - half


@njit(nogil=True, cache=True)
def _select(costs, avail, lo, hi, ratio, denom, method, reject_boundary):
    """
    Pick the integer argmin over available offsets lo..hi and refine it.
    Returns (ok, offset, cost).
    """
    n = costs.shape[0]
    best = -1
    best_c = np.iinfo(np.int64).max
    for k in range(n):
        if avail[k] and costs[k] < best_c:
            best = k
            best_c = costs[k]
    if best < 0:
        return False, 0.0, 0

    second = np.iinfo(np.int64).max
    has_second = False
    for k in range(n):
        if avail[k] and abs(k - best) > 1 and costs[k] < second:
            second = costs[k]
            has_second = True
    if has_second and best_c > ratio * second:
        return False, 0.0, best_c

    u = lo + best
    if u == lo or u == hi:
        if reject_boundary:
            return False, 0.0, best_c
        return True, float(u), best_c
    if best_c == 0:
        return True, float(u), best_c
    if best - 1 < 0 or best + 1 >= n or not avail[best - 1] or not avail[best + 1]:
        return True, float(u), best_c

    cm = float(costs[best - 1])
    c0 = float(best_c)
    cp = float(costs[best + 1])
    if method == 0:
        den = cm - 2.0 * c0 + cp
        off = 0.0 if den == 0.0 else (cm - cp) / (2.0 * den)
    else:
        slope = max(cm - c0, cp - c0)
        off = 0.0 if slope == 0.0 else (cm - cp) / (2.0 * slope)
    off = min(max(off, -0.5), 0.5)
    return True, math.floor((u + off) * denom + 0.5) / denom, best_c


def match_block(I_s: np.ndarray, I_t: np.ndarray, x: int, y: int, search: tuple[int, int],
                orientation: str = "horizontal", *, window: int = 9, subpixel_denominator: int = 8,
                uniqueness_ratio: float = 0.8, subpixel_method: str = "parabolic",
                reject_range_boundary: bool = True, textured: bool | None = None):
    """
    Exhaustive scan of integer offsets search[0]..search[1] along the epipolar
    axis for the window centred at (x, y). Offsets whose target window leaves
    I_t are skipped. Returns (subpixel offset, integer cost) or None.
    """
    if orientation == "vertical":
        return match_block(I_s.T, I_t.T, y, x, search, "horizontal", window=window,
                           subpixel_denominator=subpixel_denominator, uniqueness_ratio=uniqueness_ratio,
                           subpixel_method=subpixel_method, reject_range_boundary=reject_range_boundary,
                           textured=textured)
    lo, hi = search
    if hi < lo:
        raise ValueError(f"empty search range {search}")
    half = window // 2
    if not _inside(I_s, x, y, half):
        raise ValueError(f"window at ({x}, {y}) leaves the source image")

    src = np.asarray(I_s, dtype=np.int64)
    tgt = np.asarray(I_t, dtype=np.int64)
    if tgt.shape[0] != src.shape[0]:
        raise ValueError("source and target must have the same number of rows")
    patch = src[y - half:y + half + 1, x - half:x + half + 1]
    if textured is None:
        textured = int(patch.max()) - int(patch.min()) >= 2
    if not textured:
        return None

    n = hi - lo + 1
    costs = np.zeros(n, dtype=np.int64)
    xt = x + np.arange(lo, hi + 1)
    avail = (xt >= half) & (xt < tgt.shape[1] - half)
    if avail.any():
        # every target window on the row band, one per centre column
        windows = sliding_window_view(tgt[y - half:y + half + 1], (window, window))[0]
        costs[avail] = np.abs(windows[xt[avail] - half] - patch).sum(axis=(1, 2))

    ok, off, cost = _select(costs, avail, lo, hi, uniqueness_ratio, subpixel_denominator,
                            SUBPIXEL_METHODS[subpixel_method], reject_range_boundary)
    return (off, int(cost)) if ok else None


# ─── Optimized matcher ────────────────────────────────────────────────────────

@njit(nogil=True, cache=True)
def _match_rows(src, ref, textured, r0, r1, lo, hi, half, ratio, denom, method, reject_boundary,
                out_off, out_valid, out_cost):
    h, w = src.shape
    n = hi - lo + 1
    table = np.zeros((w, n), np.int64)
    avail = np.zeros((w, n), np.bool_)
    colsum = np.zeros(w, np.int64)
    for y in range(max(r0, half), min(r1, h - half)):
        avail[:, :] = False
        for k in range(n):
            u = lo + k
            xs0 = max(0, -u)
            xs1 = min(w, w - u)
            c0 = max(xs0 + half, half)
            c1 = min(xs1 - half, w - half)
            if c1 <= c0:
                continue
            for x in range(c0 - half, c1 + half):
                s = 0
                for j in range(y - half, y + half + 1):
                    s += abs(src[j, x] - ref[j, x + u])
                colsum[x] = s
            acc = 0
            for x in range(c0 - half, c0 + half + 1):
                acc += colsum[x]
            table[c0, k] = acc
            avail[c0, k] = True
            for x in range(c0 + 1, c1):
                acc += colsum[x + half] - colsum[x - half - 1]
                table[x, k] = acc
                avail[x, k] = True
        for x in range(half, w - half):
            if not textured[y, x]:
                continue
            ok, off, cost = _select(table[x], avail[x], lo, hi, ratio, denom, method, reject_boundary)
            if ok:
                out_off[y, x] = off
                out_valid[y, x] = True
                out_cost[y, x] = cost


def texture_mask(codes: np.ndarray, window: int) -> np.ndarray:
    """True where the window's code range spans at least 2 quantization levels."""
    codes = np.asarray(codes, dtype=np.int64)
    spread = ndimage.maximum_filter(codes, size=window) - ndimage.minimum_filter(codes, size=window)
    return spread >= 2


def match_offsets(src_codes: np.ndarray, ref_codes: np.ndarray, search: tuple[int, int], *, window: int = 9,
                  textured: np.ndarray | None = None, subpixel_denominator: int = 8,
                  uniqueness_ratio: float = 0.8, subpixel_method: str = "parabolic",
                  reject_range_boundary: bool = True, jobs: int = 1, rows_per_chunk: int = 16):
    """
    match_block for every pixel at once (canonical horizontal frame).
    Returns (offsets with NaN where invalid, valid mask, integer costs).
    """
    src = np.ascontiguousarray(src_codes, dtype=np.int64)
    ref = np.ascontiguousarray(ref_codes, dtype=np.int64)
    if src.shape != ref.shape:
        raise ResolutionMismatchError(f"capture {src.shape} vs reference {ref.shape}")
    lo, hi = search
    if hi < lo:
        raise ValueError(f"empty search range {search}")
    if textured is None:
        textured = texture_mask(src, window)
    textured = np.ascontiguousarray(textured, dtype=np.bool_)

    h, _ = src.shape
    off = np.full(src.shape, np.nan)
    valid = np.zeros(src.shape, dtype=np.bool_)
    cost = np.zeros(src.shape, dtype=np.int64)
    args = (lo, hi, window // 2, uniqueness_ratio, subpixel_denominator,
            SUBPIXEL_METHODS[subpixel_method], reject_range_boundary, off, valid, cost)

    chunks = [(r, min(r + rows_per_chunk, h)) for r in range(0, h, rows_per_chunk)]
    if jobs == 1:
        for r0, r1 in chunks:
            _match_rows(src, ref, textured, r0, r1, *args)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(lambda c: _match_rows(src, ref, textured, c[0], c[1], *args), chunks))
    return off, valid, cost


# ─── Pre-processing ───────────────────────────────────────────────────────────

def to_codes(intensities: np.ndarray, bit_depth: int) -> np.ndarray:
    levels = 2 ** bit_depth - 1
    return np.round(np.clip(intensities, 0.0, 1.0) * levels).astype(np.int64)


def prefilter(intensities: np.ndarray, window: int, bit_depth: int, contrast_floor: float = 0.004) -> np.ndarray:
    """Local contrast normalization over the matching window, re-quantized to integer codes."""
    img = np.asarray(intensities, dtype=np.float64)
    mean = ndimage.uniform_filter(img, size=window, mode="reflect")
    mean_sq = ndimage.uniform_filter(img * img, size=window, mode="reflect")
    std = np.sqrt(np.maximum(mean_sq - mean * mean, 0.0))
    z = np.clip((img - mean) / np.maximum(std, contrast_floor), -NORMALIZED_CLIP, NORMALIZED_CLIP)
    levels = 2 ** bit_depth - 1
    return np.round((z + NORMALIZED_CLIP) / (2.0 * NORMALIZED_CLIP) * levels).astype(np.int64)


def _to_canonical(img: np.ndarray, sensor: SensorModel) -> np.ndarray:
    if sensor.orientation == "vertical":
        img = img.T
    if sensor.projector_side > 0:
        img = img[:, ::-1]
    return np.ascontiguousarray(img)


def _from_canonical(img: np.ndarray, sensor: SensorModel) -> np.ndarray:
    if sensor.projector_side > 0:
        img = img[:, ::-1]
    if sensor.orientation == "vertical":
        img = img.T
    return np.ascontiguousarray(img)


# ─── Public entry points ──────────────────────────────────────────────────────

def compute_disparity(capture: IrCapture | np.ndarray, reference: np.ndarray, sensor: SensorModel,
                      settings: MatchSettings | None = None) -> DisparityMap:
    """Per-pixel disparity of `capture` against `reference`; border pixels are invalid."""
    settings = settings or MatchSettings()
    image = capture.intensities if isinstance(capture, IrCapture) else np.asarray(capture)
    if image.shape != reference.shape:
        raise ResolutionMismatchError(f"capture {image.shape} and reference {reference.shape} differ")
    if image.shape != sensor.camera.shape:
        raise ResolutionMismatchError(f"capture {image.shape} is not the camera resolution {sensor.camera.shape}")
    start = time.perf_counter()

    w = sensor.window_size_px
    bits = sensor.ir_bit_depth
    cap = _to_canonical(image, sensor)
    ref = _to_canonical(np.asarray(reference), sensor)
    textured = texture_mask(to_codes(cap, bits), w)
    levels = 2 ** bits - 1
    src = prefilter(np.round(np.clip(cap, 0, 1) * levels) / levels, w, bits, settings.contrast_floor)
    tgt = prefilter(np.round(np.clip(ref, 0, 1) * levels) / levels, w, bits, settings.contrast_floor)

    off, valid, _ = match_offsets(
        src, tgt, sensor.offset_range, window=w, textured=textured,
        subpixel_denominator=sensor.subpixel_denominator, uniqueness_ratio=settings.uniqueness_ratio,
        subpixel_method=settings.subpixel_method, reject_range_boundary=settings.reject_range_boundary,
        jobs=settings.jobs, rows_per_chunk=settings.rows_per_chunk,
    )
    d = sensor.reference_disparity + off
    d_min, d_max = sensor.disparity_range
    valid &= (d >= d_min) & (d <= d_max)

    disp = DisparityMap(_from_canonical(d, sensor), _from_canonical(valid, sensor))
    log.debug(f"matched {disp.valid_count}/{image.size} pixels in {time.perf_counter() - start:.2f}s")
    return disp


def disparity_to_depth(disp: DisparityMap, sensor: SensorModel) -> DepthMap:
    """z = f·b / d; d <= 0 and depths outside the operating range are invalid."""
    d = disp.values
    ok = disp.valid & np.isfinite(d) & (d > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(ok, sensor.fb / np.where(ok, d, 1.0), np.nan)
    z_min, z_max = sensor.depth_range_m
    ok &= (z >= z_min) & (z <= z_max)
    return DepthMap(z, ok)


def representable_depths(sensor: SensorModel) -> np.ndarray:
    """Every depth the matcher can emit, f·b / (k / denominator), ascending."""
    n = sensor.subpixel_denominator
    d_min, d_max = sensor.disparity_range
    k = np.arange(math.ceil(d_min * n), math.floor(d_max * n) + 1)
    z = sensor.fb / (k / n)
    z_min, z_max = sensor.depth_range_m
    return np.sort(z[(z >= z_min) & (z <= z_max)])


def quantization_step_m(sensor: SensorModel, z: float) -> float:
    """Spacing of representable depths around z: z(d − 1/N) − z(d) at d = f·b / z."""
    d = sensor.fb / z
    return sensor.fb / (d - 1.0 / sensor.subpixel_denominator) - sensor.fb / d
