"""
image_io.py — Read and write the image files the simulator exchanges.
Depth: 16-bit PNG in millimeters, 0 = invalid. IR: 8/16-bit grayscale PNG.
Disparity: 32-bit float TIFF, NaN = invalid. Everything goes through OpenCV.
"""
from pathlib import Path

import cv2
import numpy as np

from src.errors import AssetNotFoundError, ReportWriteError

MM_PER_M = 1000.0
MAX_DEPTH_MM = 65535


def read_gray(path) -> np.ndarray:
    """8- or 16-bit grayscale image → float grid in [0, 1]."""
    path = Path(path)
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise AssetNotFoundError(path, "image")
    if img.ndim == 3:
        img = cv2.cvtColor(img[:, :, :3], cv2.COLOR_BGR2GRAY)
    peak = float(np.iinfo(img.dtype).max) if np.issubdtype(img.dtype, np.integer) else 1.0
    return np.clip(img.astype(np.float64) / peak, 0.0, 1.0)


def write_gray16(path, intensities: np.ndarray) -> Path:
    data = np.round(np.clip(intensities, 0.0, 1.0) * 65535.0).astype(np.uint16)
    return _write(path, data)


def write_gray8(path, intensities: np.ndarray) -> Path:
    data = np.round(np.clip(intensities, 0.0, 1.0) * 255.0).astype(np.uint8)
    return _write(path, data)


def encode_depth_mm(depth_m: np.ndarray, valid: np.ndarray) -> np.ndarray:
    mm = np.where(valid, np.round(np.nan_to_num(depth_m) * MM_PER_M), 0.0)
    return np.clip(mm, 0, MAX_DEPTH_MM).astype(np.uint16)


def write_depth_png(path, depth_m: np.ndarray, valid: np.ndarray) -> Path:
    return _write(path, encode_depth_mm(depth_m, valid))


def read_depth_png(path) -> tuple[np.ndarray, np.ndarray]:
    """16-bit millimetre PNG → (depth in meters, valid mask)."""
    path = Path(path)
    if not path.exists():
        raise AssetNotFoundError(path, "depth image")
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None or img.dtype != np.uint16 or img.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel 16-bit depth PNG")
    valid = img > 0
    return np.where(valid, img.astype(np.float64) / MM_PER_M, np.nan), valid


def write_float_tiff(path, values: np.ndarray, valid: np.ndarray) -> Path:
    data = np.where(valid, values, np.nan).astype(np.float32)
    return _write(path, data)


def _write(path, data: np.ndarray) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        ok = cv2.imwrite(str(path), data)
    except (OSError, cv2.error) as e:
        raise ReportWriteError(path, str(e)) from e
    if not ok:
        raise ReportWriteError(path, "OpenCV refused the write")
    return path
