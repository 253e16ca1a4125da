"""
geometry.py — Rigid poses
---------------------------
Camera and object poses are rigid transforms (rotation + translation) in
meters. A camera pose maps camera-frame points to world-frame points; the
camera frame is x right, y down, z forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

ORTHONORMAL_TOL = 1e-6


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose contains non-finite values")
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise ValueError("pose rotation is not orthonormal")
        if np.linalg.det(r) < 0:
            raise ValueError("pose rotation has det = -1 (reflection)")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    # ── construction ─────────────────────────────────────────────────────────

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_euler(cls, degrees, translation=(0.0, 0.0, 0.0), order: str = "xyz") -> Pose:
        rot = Rotation.from_euler(order, degrees, degrees=True).as_matrix()
        return cls(rot, np.asarray(translation, dtype=np.float64))

    @classmethod
    def from_quaternion(cls, quat_xyzw, translation) -> Pose:
        rot = Rotation.from_quat(np.asarray(quat_xyzw, dtype=np.float64)).as_matrix()
        return cls(rot, np.asarray(translation, dtype=np.float64))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
        """Camera pose at `eye` whose optical axis (+z) passes through `target`."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        norm = np.linalg.norm(forward)
        if norm < 1e-12:
            raise ValueError("look_at: eye and target coincide")
        forward = forward / norm
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-9:
            # looking straight along `up`: any perpendicular will do
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
            if np.linalg.norm(right) < 1e-9:
                right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        right = right / np.linalg.norm(right)
        down = np.cross(forward, right)
        return cls(np.column_stack([right, down, forward]), eye)

    # ── algebra ──────────────────────────────────────────────────────────────

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def apply_direction(self, dirs: np.ndarray) -> np.ndarray:
        return np.asarray(dirs, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> Pose:
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: Pose) -> Pose:
        """self ∘ other: apply `other` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def translated(self, offset_world) -> Pose:
        return Pose(self.rotation, self.translation + np.asarray(offset_world, dtype=np.float64))

    def as_quaternion(self) -> np.ndarray:
        """(x, y, z, w), scalar last, w >= 0."""
        q = Rotation.from_matrix(self.rotation).as_quat()
        return -q if q[3] < 0 else q

    def to_dict(self) -> dict:
        return {
            "quaternion_xyzw": [float(v) for v in self.as_quaternion()],
            "translation_m": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, data: dict) -> Pose:
        return cls.from_quaternion(data["quaternion_xyzw"], data["translation_m"])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def normalize_rows(v: np.ndarray, eps: float = 1e-15) -> np.ndarray:
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.clip(norms, eps, None)
