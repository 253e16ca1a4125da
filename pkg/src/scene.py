"""
scene.py — Meshes, Materials & Scenes
---------------------------------------
Everything the renderer needs to know about the virtual world:
  1. Mesh       — triangles in meters, face normals, optional vertex normals,
                  UVs and a tangent-space normal map
  2. Material   — IR albedo (scalar or texture), specular fraction, roughness
  3. Scene      — posed instances + ambient light + extra emitters
  4. load_mesh  — OBJ / PLY / STL ingestion through trimesh, with structural
                  pre-checks so parse failures name a line or byte offset

Degenerate (zero-area) triangles are dropped on construction and counted.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np
import trimesh
from scipy import ndimage

from src.errors import AssetNotFoundError, MeshFormatError
from src.geometry import Pose, normalize_rows

log = logging.getLogger(__name__)

# ─── Constants ────────────────────────────────────────────────────────────────

SUPPORTED_FORMATS = ("obj", "ply", "stl")
NORMAL_TOL = 1e-6
MIN_TRIANGLE_AREA = 1e-18          # m²
ROLES = ("target", "background", "floor", "clutter")


# ─── Domain types ─────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Material:
    albedo: float | np.ndarray = 0.8
    reflectance_ratio: float = 0.0
    roughness: float = 0.5

    def __post_init__(self):
        if isinstance(self.albedo, np.ndarray):
            tex = np.asarray(self.albedo, dtype=np.float64)
            if tex.ndim != 2 or tex.size == 0:
                raise ValueError("albedo texture must be a non-empty 2D grid")
            if tex.min() < 0.0 or tex.max() > 1.0:
                raise ValueError("albedo texture values must lie in [0, 1]")
            tex.setflags(write=False)
            object.__setattr__(self, "albedo", tex)
        elif not 0.0 <= float(self.albedo) <= 1.0:
            raise ValueError(f"albedo {self.albedo} outside [0, 1]")
        if not 0.0 <= self.reflectance_ratio <= 1.0:
            raise ValueError(f"reflectance_ratio {self.reflectance_ratio} outside [0, 1]")
        if not 0.0 < self.roughness <= 1.0:
            raise ValueError(f"roughness {self.roughness} outside (0, 1]")

    @property
    def textured(self) -> bool:
        return isinstance(self.albedo, np.ndarray)

    @property
    def mean_albedo(self) -> float:
        return float(np.mean(self.albedo))


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    vertex_normals: np.ndarray | None = None
    uv: np.ndarray | None = None
    normal_map: np.ndarray | None = None
    name: str = "mesh"
    face_normals: np.ndarray = field(init=False)
    dropped_degenerate: int = field(init=False, default=0)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        tris = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{self.name}: NaN or infinite vertex coordinates")
        if tris.size and (tris.min() < 0 or tris.max() >= len(v)):
            raise ValueError(f"{self.name}: triangle index out of range (0..{len(v) - 1})")

        cross = np.cross(v[tris[:, 1]] - v[tris[:, 0]], v[tris[:, 2]] - v[tris[:, 0]])
        area = 0.5 * np.linalg.norm(cross, axis=1)
        keep = area > MIN_TRIANGLE_AREA
        dropped = int((~keep).sum())
        if dropped:
            log.debug(f"{self.name}: dropped {dropped} degenerate triangles")
        tris = tris[keep]
        face_normals = normalize_rows(cross[keep])

        vn = self.vertex_normals
        if vn is not None:
            vn = np.array(vn, dtype=np.float64).reshape(-1, 3)
            if vn.shape != v.shape:
                raise ValueError(f"{self.name}: vertex normals shape {vn.shape} != vertices {v.shape}")
            lengths = np.linalg.norm(vn, axis=1)
            if not np.all(np.isfinite(vn)) or lengths.min(initial=1.0) < 1e-9:
                log.debug(f"{self.name}: unusable vertex normals, falling back to flat shading")
                vn = None
            else:
                vn = vn / lengths[:, None]

        uv = self.uv
        if uv is not None:
            uv = np.array(uv, dtype=np.float64).reshape(-1, 2)
            if len(uv) != len(v):
                raise ValueError(f"{self.name}: {len(uv)} UVs for {len(v)} vertices")

        nmap = self.normal_map
        if nmap is not None:
            nmap = np.array(nmap, dtype=np.float64)
            if nmap.ndim != 3 or nmap.shape[2] != 3:
                raise ValueError(f"{self.name}: normal map must be H x W x 3")
            nmap = normalize_rows(nmap)

        for arr in (v, tris, face_normals, vn, uv, nmap):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "face_normals", face_normals)
        object.__setattr__(self, "vertex_normals", vn)
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "normal_map", nmap)
        object.__setattr__(self, "dropped_degenerate", dropped)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def scaled(self, factor: float) -> Mesh:
        return Mesh(self.vertices * factor, self.triangles, self.vertex_normals, self.uv, self.normal_map, self.name)

    def with_normal_map(self, normal_map: np.ndarray, tile_m: float = 0.1) -> Mesh:
        """Attach a normal map; meshes without UVs get a planar projection tiled every `tile_m` meters."""
        uv = self.uv if self.uv is not None else planar_uv(self.vertices, tile_m)
        return Mesh(self.vertices, self.triangles, self.vertex_normals, uv, normal_map, self.name)


@dataclass(frozen=True, eq=False)
class Instance:
    mesh: Mesh
    pose: Pose = field(default_factory=Pose.identity)
    material: Material = field(default_factory=Material)
    role: str = "target"
    name: str = ""

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown instance role {self.role!r}; expected one of {ROLES}")

    def world_vertices(self) -> np.ndarray:
        return self.pose.apply(self.mesh.vertices)

    def world_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        wv = self.world_vertices()
        return wv.min(axis=0), wv.max(axis=0)

    def reposed(self, pose: Pose) -> Instance:
        return replace(self, pose=pose)


@dataclass(frozen=True)
class Light:
    """kind 'point': `vector` is the position; kind 'directional': `vector` is the travel direction."""
    kind: str
    vector: tuple[float, float, float]
    power: float

    def __post_init__(self):
        if self.kind not in ("point", "directional"):
            raise ValueError(f"unknown light kind {self.kind!r}")
        if self.power < 0:
            raise ValueError("light power must be >= 0")
        if self.kind == "directional" and np.linalg.norm(self.vector) < 1e-12:
            raise ValueError("directional light needs a non-zero direction")


@dataclass(frozen=True, eq=False)
class Scene:
    instances: tuple[Instance, ...] = ()
    ambient_light: float = 0.0
    extra_lights: tuple[Light, ...] = ()

    def __post_init__(self):
        if self.ambient_light < 0:
            raise ValueError("ambient_light must be >= 0")
        object.__setattr__(self, "instances", tuple(self.instances))
        object.__setattr__(self, "extra_lights", tuple(self.extra_lights))

    @property
    def triangle_count(self) -> int:
        return sum(inst.mesh.triangle_count for inst in self.instances)

    def with_instances(self, extra) -> Scene:
        return replace(self, instances=self.instances + tuple(extra))

    def bounds_of(self, role: str) -> tuple[np.ndarray, np.ndarray] | None:
        boxes = [inst.world_bounds() for inst in self.instances if inst.role == role]
        if not boxes:
            return None
        return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)

    def target_centroid(self) -> np.ndarray:
        box = self.bounds_of("target")
        if box is None:
            return np.zeros(3)
        return 0.5 * (box[0] + box[1])


# ─── Mesh loading ─────────────────────────────────────────────────────────────

def load_mesh(path, format: str | None = None, scale: float = 1.0) -> Mesh:
    """
    Load an OBJ / PLY / STL file into a Mesh (meters, after `scale`).

    Normals present in the file become per-vertex shading normals; otherwise
    shading is flat per face. Non-manifold meshes load fine.

    Raises:
        AssetNotFoundError: the file does not exist
        MeshFormatError:    the file does not parse under `format`
    """
    path = Path(path)
    if not path.exists():
        raise AssetNotFoundError(path, "mesh file")
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in SUPPORTED_FORMATS:
        raise MeshFormatError(path, f"unsupported mesh format {fmt!r}; expected one of {SUPPORTED_FORMATS}")

    has_normals = {"obj": _precheck_obj, "ply": _precheck_ply, "stl": _precheck_stl}[fmt](path)

    try:
        loaded = trimesh.load(str(path), file_type=fmt, force="mesh", process=False)
    except Exception as e:
        raise MeshFormatError(path, f"trimesh could not parse the file: {e}") from e
    if isinstance(loaded, trimesh.Scene):
        if not loaded.geometry:
            raise MeshFormatError(path, "no geometry in file")
        loaded = trimesh.util.concatenate(tuple(loaded.geometry.values()))
    if not isinstance(loaded, trimesh.Trimesh) or len(loaded.faces) == 0:
        raise MeshFormatError(path, "file holds no triangles")

    vertex_normals = None
    if has_normals:
        vn = np.asarray(loaded.vertex_normals, dtype=np.float64)
        if vn.shape == loaded.vertices.shape:
            vertex_normals = vn

    uv = getattr(getattr(loaded, "visual", None), "uv", None)
    if uv is not None and len(uv) != len(loaded.vertices):
        uv = None

    mesh = Mesh(
        np.asarray(loaded.vertices, dtype=np.float64) * scale,
        np.asarray(loaded.faces, dtype=np.int64),
        vertex_normals=vertex_normals,
        uv=uv,
        name=path.stem,
    )
    msg = f"Loaded {path.name}: {len(mesh.vertices)} vertices, {mesh.triangle_count} triangles"
    if mesh.dropped_degenerate:
        msg += f" ({mesh.dropped_degenerate} degenerate dropped)"
    log.info(msg)
    return mesh


def _precheck_obj(path: Path) -> bool:
    vertex_count = 0
    normal_count = 0
    max_index = 0
    face_line = 0
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            kind = parts[0]
            try:
                if kind == "v":
                    [float(p) for p in parts[1:4]]
                    if len(parts) < 4:
                        raise ValueError("vertex needs 3 coordinates")
                    vertex_count += 1
                elif kind == "vn":
                    [float(p) for p in parts[1:4]]
                    if len(parts) < 4:
                        raise ValueError("normal needs 3 components")
                    normal_count += 1
                elif kind == "f":
                    if len(parts) < 4:
                        raise ValueError("face needs at least 3 vertices")
                    for token in parts[1:]:
                        idx = int(token.split("/")[0])
                        if idx == 0:
                            raise ValueError("OBJ indices are 1-based; found 0")
                        if idx < 0 and -idx > vertex_count:
                            raise ValueError(f"relative index {idx} before enough vertices")
                        if idx > max_index:
                            max_index, face_line = idx, lineno
            except ValueError as e:
                raise MeshFormatError(path, str(e), line=lineno) from e
    if vertex_count == 0:
        raise MeshFormatError(path, "no vertices found")
    if max_index > vertex_count:
        raise MeshFormatError(path, f"face index {max_index} exceeds vertex count {vertex_count}", line=face_line)
    return normal_count > 0


def _precheck_ply(path: Path) -> bool:
    with open(path, "rb") as fh:
        head = fh.read(65536)
    lines = head.split(b"\n")
    if not lines or lines[0].strip() != b"ply":
        raise MeshFormatError(path, "missing 'ply' magic", line=1)
    in_vertex = False
    has_normals = False
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip().decode("ascii", errors="replace")
        if line == "end_header":
            return has_normals
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise MeshFormatError(path, f"malformed element line {line!r}", line=lineno)
            in_vertex = tokens[1] == "vertex"
        elif tokens[0] == "property" and in_vertex and tokens[-1] == "nx":
            has_normals = True
    raise MeshFormatError(path, "header has no end_header", line=len(lines))


def _precheck_stl(path: Path) -> bool:
    size = path.stat().st_size
    with open(path, "rb") as fh:
        head = fh.read(512)
    if head.lstrip().startswith(b"solid") and b"facet" in head:
        with open(path, "r", encoding="ascii", errors="replace") as fh:
            for lineno, raw in enumerate(fh, start=1):
                parts = raw.split()
                if parts and parts[0] == "vertex":
                    try:
                        if len(parts) != 4:
                            raise ValueError("vertex needs 3 coordinates")
                        [float(p) for p in parts[1:]]
                    except ValueError as e:
                        raise MeshFormatError(path, str(e), line=lineno) from e
        return False
    if size < 84:
        raise MeshFormatError(path, "binary STL shorter than its 84-byte header", offset=size)
    (count,) = struct.unpack("<I", head[80:84])
    expected = 84 + 50 * count
    if size < expected:
        raise MeshFormatError(path, f"binary STL declares {count} triangles but is truncated", offset=size)
    return False


# ─── Primitives ───────────────────────────────────────────────────────────────

def make_box(extents) -> Mesh:
    box = trimesh.creation.box(extents=np.asarray(extents, dtype=np.float64))
    return Mesh(box.vertices, box.faces, name="box")


def make_sphere(radius: float, subdivisions: int = 2) -> Mesh:
    sph = trimesh.creation.icosphere(subdivisions=subdivisions, radius=radius)
    return Mesh(sph.vertices, sph.faces, vertex_normals=normalize_rows(np.asarray(sph.vertices)), name="sphere")


def make_cylinder(radius: float, height: float, sections: int = 24) -> Mesh:
    cyl = trimesh.creation.cylinder(radius=radius, height=height, sections=sections)
    return Mesh(cyl.vertices, cyl.faces, name="cylinder")


def make_plane(width: float, height: float) -> Mesh:
    """Axis-aligned quad in the z = 0 plane, centred on the origin, normal +z."""
    hw, hh = 0.5 * width, 0.5 * height
    verts = np.array([[-hw, -hh, 0.0], [hw, -hh, 0.0], [hw, hh, 0.0], [-hw, hh, 0.0]])
    uv = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return Mesh(verts, np.array([[0, 1, 2], [0, 2, 3]]), uv=uv, name="plane")


# ─── Surface detail ───────────────────────────────────────────────────────────

def planar_uv(vertices: np.ndarray, tile_m: float) -> np.ndarray:
    """Project onto the two axes of largest extent; one texture tile every `tile_m` meters."""
    extent = np.ptp(vertices, axis=0)
    a, b = np.argsort(extent)[::-1][:2]
    return np.column_stack([vertices[:, a], vertices[:, b]]) / tile_m


def bumpy_normal_map(size: int = 256, amplitude: float = 0.5, frequency: float = 8.0, seed: int = 0) -> np.ndarray:
    """Tangent-space normal map of a smooth random height field (tileable)."""
    rng = np.random.default_rng(seed)
    height = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=size / (4.0 * frequency), mode="wrap")
    height /= max(np.abs(height).max(), 1e-12)
    gy, gx = np.gradient(height)
    scale = amplitude * frequency
    normals = np.dstack([-scale * gx, -scale * gy, np.ones_like(height)])
    return normalize_rows(normals)


def load_normal_map(path) -> np.ndarray:
    """RGB-encoded tangent-space normal map image → H x W x 3 unit vectors."""
    path = Path(path)
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise AssetNotFoundError(path, "normal map")
    if img.ndim != 3 or img.shape[2] < 3:
        raise ValueError(f"{path}: normal map must be a colour image")
    peak = 65535.0 if img.dtype == np.uint16 else 255.0
    rgb = img[:, :, 2::-1].astype(np.float64) / peak
    return normalize_rows(rgb * 2.0 - 1.0)
