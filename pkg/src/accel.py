"""
accel.py — Ray / scene intersection
-------------------------------------
Flattens a Scene into world-space triangle arrays and builds an axis-aligned
BVH (median split on the widest centroid axis). Traversal, any-hit shadow
queries and the brute-force oracle are numba kernels that share one
Möller–Trumbore test, so accelerated and brute-force hits agree exactly.

Ties at equal distance go to the lowest triangle index on both paths.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage

from src.geometry import normalize_rows
from src.scene import Material, Scene

log = logging.getLogger(__name__)

T_EPS = 1e-6          # m, minimum accepted hit distance
DET_EPS = 1e-20
STACK_SIZE = 256
LEAF_SIZE = 4


# ─── Types ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class AcceleratedScene:
    """Immutable after build; safe to query from any number of threads."""
    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    face_normals: np.ndarray
    corner_normals: np.ndarray
    has_vertex_normals: np.ndarray
    corner_uv: np.ndarray
    has_uv: np.ndarray
    tangents: np.ndarray
    bitangents: np.ndarray
    instance_of: np.ndarray
    materials: tuple
    normal_maps: tuple
    roles: tuple
    node_min: np.ndarray
    node_max: np.ndarray
    node_left: np.ndarray
    node_axis: np.ndarray
    node_start: np.ndarray
    node_count: np.ndarray
    order: np.ndarray
    ambient_light: float = 0.0
    extra_lights: tuple = ()

    @property
    def triangle_count(self) -> int:
        return len(self.v0)

    @property
    def empty(self) -> bool:
        return len(self.v0) == 0


@dataclass(frozen=True, eq=False)
class RayHits:
    distance: np.ndarray     # inf on miss
    triangle: np.ndarray     # -1 on miss
    b1: np.ndarray
    b2: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.triangle >= 0


@dataclass(frozen=True, eq=False)
class SurfaceSample:
    """Shading inputs for the hit rows of a ray batch (`rows` indexes the batch)."""
    rows: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    albedo: np.ndarray
    reflectance_ratio: np.ndarray
    roughness: np.ndarray
    instance: np.ndarray


@dataclass(frozen=True, eq=False)
class Hit:
    point: np.ndarray
    normal: np.ndarray
    material: Material
    distance: float
    triangle: int
    instance: int


# ─── Build ────────────────────────────────────────────────────────────────────

def build_accelerator(scene: Scene, leaf_size: int = LEAF_SIZE) -> AcceleratedScene:
    """Flatten `scene` into world space and build its BVH. An empty scene gives an always-miss accelerator."""
    start = time.perf_counter()
    v0, e1, e2, fn, cn, has_vn, cuv, has_uv, inst = [], [], [], [], [], [], [], [], []
    for i, instance in enumerate(scene.instances):
        mesh = instance.mesh
        if mesh.triangle_count == 0:
            continue
        wv = instance.world_vertices()
        tri = mesh.triangles
        a, b, c = wv[tri[:, 0]], wv[tri[:, 1]], wv[tri[:, 2]]
        v0.append(a)
        e1.append(b - a)
        e2.append(c - a)
        fn.append(instance.pose.apply_direction(mesh.face_normals))
        if mesh.vertex_normals is not None:
            wn = instance.pose.apply_direction(mesh.vertex_normals)
            cn.append(wn[tri])
            has_vn.append(np.ones(len(tri), dtype=bool))
        else:
            cn.append(np.zeros((len(tri), 3, 3)))
            has_vn.append(np.zeros(len(tri), dtype=bool))
        if mesh.uv is not None:
            cuv.append(mesh.uv[tri])
            has_uv.append(np.ones(len(tri), dtype=bool))
        else:
            cuv.append(np.zeros((len(tri), 3, 2)))
            has_uv.append(np.zeros(len(tri), dtype=bool))
            if instance.material.textured or mesh.normal_map is not None:
                log.warning(f"{mesh.name}: texture without UVs, using mean albedo and flat normals")
        inst.append(np.full(len(tri), i, dtype=np.int64))

    if not v0:
        z3 = np.zeros((0, 3))
        accel = AcceleratedScene(
            z3, z3, z3, z3, np.zeros((0, 3, 3)), np.zeros(0, bool), np.zeros((0, 3, 2)), np.zeros(0, bool),
            z3, z3, np.zeros(0, np.int64), tuple(x.material for x in scene.instances),
            tuple(x.mesh.normal_map for x in scene.instances), tuple(x.role for x in scene.instances),
            z3, z3, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64),
            np.zeros(0, np.int64), scene.ambient_light, scene.extra_lights,
        )
        log.info("Built empty accelerator (scene has no triangles)")
        return accel

    v0, e1, e2 = np.concatenate(v0), np.concatenate(e1), np.concatenate(e2)
    face_normals = normalize_rows(np.concatenate(fn))
    corner_uv = np.concatenate(cuv)
    has_uv_arr = np.concatenate(has_uv)
    tangents, bitangents = _triangle_tangents(e1, e2, corner_uv, face_normals)

    tri_min = np.minimum(v0, np.minimum(v0 + e1, v0 + e2))
    tri_max = np.maximum(v0, np.maximum(v0 + e1, v0 + e2))
    centroids = v0 + (e1 + e2) / 3.0
    nodes = _build_bvh(tri_min, tri_max, centroids, leaf_size)

    accel = AcceleratedScene(
        v0=v0, e1=e1, e2=e2,
        face_normals=face_normals,
        corner_normals=np.concatenate(cn),
        has_vertex_normals=np.concatenate(has_vn),
        corner_uv=corner_uv,
        has_uv=has_uv_arr,
        tangents=tangents,
        bitangents=bitangents,
        instance_of=np.concatenate(inst),
        materials=tuple(x.material for x in scene.instances),
        normal_maps=tuple(x.mesh.normal_map for x in scene.instances),
        roles=tuple(x.role for x in scene.instances),
        node_min=nodes[0], node_max=nodes[1], node_left=nodes[2], node_axis=nodes[3],
        node_start=nodes[4], node_count=nodes[5], order=nodes[6],
        ambient_light=scene.ambient_light,
        extra_lights=scene.extra_lights,
    )
    log.info(f"Built BVH: {accel.triangle_count} triangles, {len(accel.node_min)} nodes "
             f"in {time.perf_counter() - start:.2f}s")
    return accel


def _triangle_tangents(e1, e2, corner_uv, normals):
    du1 = corner_uv[:, 1, 0] - corner_uv[:, 0, 0]
    dv1 = corner_uv[:, 1, 1] - corner_uv[:, 0, 1]
    du2 = corner_uv[:, 2, 0] - corner_uv[:, 0, 0]
    dv2 = corner_uv[:, 2, 1] - corner_uv[:, 0, 1]
    det = du1 * dv2 - du2 * dv1
    ok = np.abs(det) > 1e-12
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)[:, None]
    t = (e1 * dv2[:, None] - e2 * dv1[:, None]) * inv
    # fall back to the first edge where the UV map is degenerate
    t = np.where(ok[:, None], t, e1)
    t = normalize_rows(t - normals * np.sum(t * normals, axis=1, keepdims=True))
    b = np.cross(normals, t)
    return t, b


@njit(cache=True)
def _build_bvh(tri_min, tri_max, centroids, leaf_size):
    m = centroids.shape[0]
    max_nodes = 2 * m
    node_min = np.empty((max_nodes, 3))
    node_max = np.empty((max_nodes, 3))
    node_left = np.full(max_nodes, -1, np.int64)
    node_axis = np.zeros(max_nodes, np.int64)
    node_start = np.zeros(max_nodes, np.int64)
    node_count = np.zeros(max_nodes, np.int64)
    order = np.arange(m)

    st_node = np.empty(max_nodes, np.int64)
    st_lo = np.empty(max_nodes, np.int64)
    st_hi = np.empty(max_nodes, np.int64)
    st_node[0], st_lo[0], st_hi[0] = 0, 0, m
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node, lo, hi = st_node[sp], st_lo[sp], st_hi[sp]
        bmin = np.full(3, np.inf)
        bmax = np.full(3, -np.inf)
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for k in range(lo, hi):
            t = order[k]
            for a in range(3):
                bmin[a] = min(bmin[a], tri_min[t, a])
                bmax[a] = max(bmax[a], tri_max[t, a])
                cmin[a] = min(cmin[a], centroids[t, a])
                cmax[a] = max(cmax[a], centroids[t, a])
        for a in range(3):
            pad = 1e-9 + 1e-7 * (bmax[a] - bmin[a])
            node_min[node, a] = bmin[a] - pad
            node_max[node, a] = bmax[a] + pad

        axis = 0
        extent = cmax[0] - cmin[0]
        for a in range(1, 3):
            if cmax[a] - cmin[a] > extent:
                axis = a
                extent = cmax[a] - cmin[a]
        if hi - lo <= leaf_size or extent <= 0.0:
            node_start[node] = lo
            node_count[node] = hi - lo
            continue

        idx = order[lo:hi].copy()
        keys = np.empty(hi - lo)
        for k in range(hi - lo):
            keys[k] = centroids[idx[k], axis]
        perm = np.argsort(keys, kind="mergesort")
        for k in range(hi - lo):
            order[lo + k] = idx[perm[k]]
        mid = lo + (hi - lo) // 2

        left = n_nodes
        n_nodes += 2
        node_left[node] = left
        node_axis[node] = axis
        st_node[sp], st_lo[sp], st_hi[sp] = left + 1, mid, hi
        sp += 1
        st_node[sp], st_lo[sp], st_hi[sp] = left, lo, mid
        sp += 1

    return (node_min[:n_nodes].copy(), node_max[:n_nodes].copy(), node_left[:n_nodes].copy(),
            node_axis[:n_nodes].copy(), node_start[:n_nodes].copy(), node_count[:n_nodes].copy(), order)


# ─── Kernels ──────────────────────────────────────────────────────────────────

@njit(inline="always")
def _ray_triangle(ox, oy, oz, dx, dy, dz, v0, e1, e2, k):
    px = dy * e2[k, 2] - dz * e2[k, 1]
    py = dz * e2[k, 0] - dx * e2[k, 2]
    pz = dx * e2[k, 1] - dy * e2[k, 0]
    det = e1[k, 0] * px + e1[k, 1] * py + e1[k, 2] * pz
    if abs(det) < DET_EPS:
        return np.inf, 0.0, 0.0
    inv = 1.0 / det
    tx = ox - v0[k, 0]
    ty = oy - v0[k, 1]
    tz = oz - v0[k, 2]
    b1 = (tx * px + ty * py + tz * pz) * inv
    if b1 < 0.0 or b1 > 1.0:
        return np.inf, 0.0, 0.0
    qx = ty * e1[k, 2] - tz * e1[k, 1]
    qy = tz * e1[k, 0] - tx * e1[k, 2]
    qz = tx * e1[k, 1] - ty * e1[k, 0]
    b2 = (dx * qx + dy * qy + dz * qz) * inv
    if b2 < 0.0 or b1 + b2 > 1.0:
        return np.inf, 0.0, 0.0
    t = (e2[k, 0] * qx + e2[k, 1] * qy + e2[k, 2] * qz) * inv
    if t <= T_EPS:
        return np.inf, 0.0, 0.0
    return t, b1, b2


@njit(inline="always")
def _slab(ox, oy, oz, ix, iy, iz, node_min, node_max, n):
    t1 = (node_min[n, 0] - ox) * ix
    t2 = (node_max[n, 0] - ox) * ix
    tmin = min(t1, t2)
    tmax = max(t1, t2)
    t1 = (node_min[n, 1] - oy) * iy
    t2 = (node_max[n, 1] - oy) * iy
    tmin = max(tmin, min(t1, t2))
    tmax = min(tmax, max(t1, t2))
    t1 = (node_min[n, 2] - oz) * iz
    t2 = (node_max[n, 2] - oz) * iz
    tmin = max(tmin, min(t1, t2))
    tmax = min(tmax, max(t1, t2))
    return tmax >= max(tmin, 0.0), tmin


@njit(inline="always")
def _inv(d):
    return 1.0 / d if d != 0.0 else 1e30


@njit(nogil=True, cache=True)
def _closest_hits(origins, dirs, v0, e1, e2, node_min, node_max, node_left, node_axis,
                  node_start, node_count, order, t_out, tri_out, b1_out, b2_out):
    stack = np.empty(STACK_SIZE, np.int64)
    for i in range(origins.shape[0]):
        ox, oy, oz = origins[i, 0], origins[i, 1], origins[i, 2]
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        ix, iy, iz = _inv(dx), _inv(dy), _inv(dz)
        best_t = np.inf
        best_tri = -1
        best_b1 = 0.0
        best_b2 = 0.0
        stack[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            n = stack[sp]
            hit, tnear = _slab(ox, oy, oz, ix, iy, iz, node_min, node_max, n)
            if not hit or tnear > best_t:
                continue
            left = node_left[n]
            if left < 0:
                for k in range(node_start[n], node_start[n] + node_count[n]):
                    tri = order[k]
                    t, b1, b2 = _ray_triangle(ox, oy, oz, dx, dy, dz, v0, e1, e2, tri)
                    if t < best_t or (t == best_t and t < np.inf and tri < best_tri):
                        best_t, best_tri, best_b1, best_b2 = t, tri, b1, b2
            else:
                d_axis = dirs[i, node_axis[n]]
                # near child popped first
                if d_axis >= 0.0:
                    stack[sp] = left + 1
                    stack[sp + 1] = left
                else:
                    stack[sp] = left
                    stack[sp + 1] = left + 1
                sp += 2
        t_out[i] = best_t
        tri_out[i] = best_tri
        b1_out[i] = best_b1
        b2_out[i] = best_b2


@njit(nogil=True, cache=True)
def _any_hits(origins, dirs, max_t, v0, e1, e2, node_min, node_max, node_left,
              node_start, node_count, order, out):
    stack = np.empty(STACK_SIZE, np.int64)
    for i in range(origins.shape[0]):
        ox, oy, oz = origins[i, 0], origins[i, 1], origins[i, 2]
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        ix, iy, iz = _inv(dx), _inv(dy), _inv(dz)
        limit = max_t[i]
        found = False
        stack[0] = 0
        sp = 1
        while sp > 0 and not found:
            sp -= 1
            n = stack[sp]
            hit, tnear = _slab(ox, oy, oz, ix, iy, iz, node_min, node_max, n)
            if not hit or tnear >= limit:
                continue
            left = node_left[n]
            if left < 0:
                for k in range(node_start[n], node_start[n] + node_count[n]):
                    t, _, _ = _ray_triangle(ox, oy, oz, dx, dy, dz, v0, e1, e2, order[k])
                    if t < limit:
                        found = True
                        break
            else:
                stack[sp] = left + 1
                stack[sp + 1] = left
                sp += 2
        out[i] = found


@njit(nogil=True, cache=True)
def _brute_force_hits(origins, dirs, v0, e1, e2, t_out, tri_out, b1_out, b2_out):
    for i in range(origins.shape[0]):
        ox, oy, oz = origins[i, 0], origins[i, 1], origins[i, 2]
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        best_t = np.inf
        best_tri = -1
        best_b1 = 0.0
        best_b2 = 0.0
        for k in range(v0.shape[0]):
            t, b1, b2 = _ray_triangle(ox, oy, oz, dx, dy, dz, v0, e1, e2, k)
            if t < best_t:
                best_t, best_tri, best_b1, best_b2 = t, k, b1, b2
        t_out[i] = best_t
        tri_out[i] = best_tri
        b1_out[i] = best_b1
        b2_out[i] = best_b2


# ─── Queries ──────────────────────────────────────────────────────────────────

def _prepare(origins, directions):
    o = np.ascontiguousarray(np.asarray(origins, dtype=np.float64).reshape(-1, 3))
    d = np.ascontiguousarray(np.asarray(directions, dtype=np.float64).reshape(-1, 3))
    if len(o) != len(d):
        if len(o) == 1:
            o = np.ascontiguousarray(np.broadcast_to(o, d.shape))
        else:
            raise ValueError(f"{len(o)} origins for {len(d)} directions")
    return o, d


def _empty_hits(n: int) -> RayHits:
    return RayHits(np.full(n, np.inf), np.full(n, -1, np.int64), np.zeros(n), np.zeros(n))


def intersect_many(accel: AcceleratedScene, origins, directions) -> RayHits:
    """Nearest hit (distance > 1e-6 m) for a batch of rays through the BVH."""
    o, d = _prepare(origins, directions)
    n = len(d)
    if accel.empty or n == 0:
        return _empty_hits(n)
    t, tri, b1, b2 = np.empty(n), np.empty(n, np.int64), np.empty(n), np.empty(n)
    _closest_hits(o, d, accel.v0, accel.e1, accel.e2, accel.node_min, accel.node_max, accel.node_left,
                  accel.node_axis, accel.node_start, accel.node_count, accel.order, t, tri, b1, b2)
    return RayHits(t, tri, b1, b2)


def intersect_brute_force(accel: AcceleratedScene, origins, directions) -> RayHits:
    """Reference path: test every triangle for every ray."""
    o, d = _prepare(origins, directions)
    n = len(d)
    if accel.empty or n == 0:
        return _empty_hits(n)
    t, tri, b1, b2 = np.empty(n), np.empty(n, np.int64), np.empty(n), np.empty(n)
    _brute_force_hits(o, d, accel.v0, accel.e1, accel.e2, t, tri, b1, b2)
    return RayHits(t, tri, b1, b2)


def occluded(accel: AcceleratedScene, origins, directions, max_distance) -> np.ndarray:
    """True where some triangle lies along the ray strictly closer than `max_distance`."""
    o, d = _prepare(origins, directions)
    n = len(d)
    if accel.empty or n == 0:
        return np.zeros(n, dtype=bool)
    limit = np.ascontiguousarray(np.broadcast_to(np.asarray(max_distance, dtype=np.float64), (n,)))
    out = np.empty(n, dtype=np.bool_)
    _any_hits(o, d, limit, accel.v0, accel.e1, accel.e2, accel.node_min, accel.node_max, accel.node_left,
              accel.node_start, accel.node_count, accel.order, out)
    return out


def intersect(accel: AcceleratedScene, origin, direction) -> Hit | None:
    """Nearest hit of one ray; `direction` must be unit length."""
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-6:
        raise ValueError("ray direction must be unit length")
    hits = intersect_many(accel, origin, direction)
    if not hits.hit[0]:
        return None
    surf = surface_at(accel, origin, direction, hits)
    inst = int(surf.instance[0])
    return Hit(
        point=surf.points[0],
        normal=surf.normals[0],
        material=accel.materials[inst],
        distance=float(hits.distance[0]),
        triangle=int(hits.triangle[0]),
        instance=inst,
    )


# ─── Surface attributes ───────────────────────────────────────────────────────

def surface_at(accel: AcceleratedScene, origins, directions, hits: RayHits) -> SurfaceSample:
    """
    Hit points, shading normals (facing the ray) and material values for every
    ray in the batch that hit something.
    """
    o, d = _prepare(origins, directions)
    rows = np.flatnonzero(hits.hit)
    tri = hits.triangle[rows]
    b1 = hits.b1[rows][:, None]
    b2 = hits.b2[rows][:, None]
    b0 = 1.0 - b1 - b2
    dirs = d[rows]
    points = o[rows] + dirs * hits.distance[rows][:, None]

    normals = accel.face_normals[tri].copy()
    smooth = accel.has_vertex_normals[tri]
    if smooth.any():
        cn = accel.corner_normals[tri[smooth]]
        interp = b0[smooth] * cn[:, 0] + b1[smooth] * cn[:, 1] + b2[smooth] * cn[:, 2]
        normals[smooth] = normalize_rows(interp)

    inst = accel.instance_of[tri]
    albedo = np.empty(len(rows))
    refl = np.empty(len(rows))
    rough = np.empty(len(rows))
    uv = None
    if accel.has_uv[tri].any():
        cuv = accel.corner_uv[tri]
        uv = b0 * cuv[:, 0] + b1 * cuv[:, 1] + b2 * cuv[:, 2]

    for i in np.unique(inst):
        sel = inst == i
        mat = accel.materials[i]
        refl[sel] = mat.reflectance_ratio
        rough[sel] = mat.roughness
        with_uv = sel & accel.has_uv[tri]
        albedo[sel] = mat.mean_albedo
        if mat.textured and with_uv.any():
            albedo[with_uv] = _sample_wrapped(mat.albedo, uv[with_uv])
        nmap = accel.normal_maps[i]
        if nmap is not None and with_uv.any():
            local = np.stack([_sample_wrapped(nmap[:, :, c], uv[with_uv]) for c in range(3)], axis=1)
            local = normalize_rows(local)
            t = accel.tangents[tri[with_uv]]
            b = accel.bitangents[tri[with_uv]]
            n = normals[with_uv]
            # re-orthogonalize the tangent frame around the interpolated normal
            t = normalize_rows(t - n * np.sum(t * n, axis=1, keepdims=True))
            b = np.cross(n, t)
            normals[with_uv] = normalize_rows(local[:, :1] * t + local[:, 1:2] * b + local[:, 2:] * n)

    facing = np.sum(normals * dirs, axis=1) > 0.0
    normals[facing] *= -1.0
    return SurfaceSample(rows, points, normals, albedo, refl, rough, inst)


def _sample_wrapped(grid: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear lookup with repeat-wrap; v = 0 is the bottom row."""
    h, w = grid.shape
    x = np.mod(uv[:, 0], 1.0) * w - 0.5
    y = (1.0 - np.mod(uv[:, 1], 1.0)) * h - 0.5
    return ndimage.map_coordinates(grid, [y, x], order=1, mode="grid-wrap")
