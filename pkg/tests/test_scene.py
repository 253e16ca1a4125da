import struct

import numpy as np
import pytest

from src.errors import AssetNotFoundError, MeshFormatError
from src.geometry import Pose
from src.scene import (Instance, Light, Material, Mesh, Scene, bumpy_normal_map, load_mesh, make_box,
                       make_cylinder, make_plane, make_sphere, planar_uv)

QUAD = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])


# ── Mesh ──────────────────────────────────────────────────────────────────────

def test_degenerate_triangles_are_dropped_and_counted():
    mesh = Mesh(QUAD, [[0, 1, 2], [0, 2, 3], [0, 0, 1], [0, 1, 1]])
    assert mesh.triangle_count == 2
    assert mesh.dropped_degenerate == 2
    np.testing.assert_allclose(mesh.face_normals, [[0, 0, 1], [0, 0, 1]])


def test_collinear_triangle_is_degenerate():
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    mesh = Mesh(verts, [[0, 1, 2]])
    assert mesh.triangle_count == 0
    assert mesh.dropped_degenerate == 1


def test_out_of_range_index_raises():
    with pytest.raises(ValueError, match="out of range"):
        Mesh(QUAD, [[0, 1, 4]])


def test_non_finite_vertices_raise():
    bad = QUAD.copy()
    bad[2, 1] = np.nan
    with pytest.raises(ValueError):
        Mesh(bad, [[0, 1, 2]])


def test_zero_vertex_normals_fall_back_to_flat():
    mesh = Mesh(QUAD, [[0, 1, 2]], vertex_normals=np.zeros((4, 3)))
    assert mesh.vertex_normals is None


def test_vertex_normals_are_normalized():
    mesh = Mesh(QUAD, [[0, 1, 2]], vertex_normals=np.tile([0.0, 0.0, 2.0], (4, 1)))
    np.testing.assert_allclose(np.linalg.norm(mesh.vertex_normals, axis=1), 1.0)


def test_mesh_arrays_are_read_only():
    mesh = Mesh(QUAD, [[0, 1, 2]])
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 3.0


def test_with_normal_map_adds_planar_uv():
    mesh = make_box((0.2, 0.2, 0.2)).with_normal_map(bumpy_normal_map(32), tile_m=0.1)
    assert mesh.uv is not None and mesh.uv.shape == (len(mesh.vertices), 2)
    assert mesh.normal_map.shape == (32, 32, 3)


def test_planar_uv_uses_the_two_largest_axes():
    verts = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.01], [0.0, 1.0, 0.0]])
    uv = planar_uv(verts, tile_m=0.5)
    np.testing.assert_allclose(uv[1], [4.0, 0.0])
    np.testing.assert_allclose(uv[2], [0.0, 2.0])


# ── Primitives ────────────────────────────────────────────────────────────────

def test_primitive_bounds():
    lo, hi = make_box((0.2, 0.4, 0.6)).bounds()
    np.testing.assert_allclose(hi - lo, [0.2, 0.4, 0.6])
    lo, hi = make_sphere(0.3).bounds()
    np.testing.assert_allclose(hi, [0.3, 0.3, 0.3], atol=1e-6)
    lo, hi = make_cylinder(0.1, 0.5).bounds()
    assert hi[2] - lo[2] == pytest.approx(0.5)
    plane = make_plane(2.0, 1.0)
    assert plane.triangle_count == 2
    np.testing.assert_allclose(plane.face_normals, [[0, 0, 1], [0, 0, 1]])


def test_sphere_has_smooth_normals():
    sphere = make_sphere(0.5, subdivisions=1)
    np.testing.assert_allclose(sphere.vertex_normals, sphere.vertices / 0.5, atol=1e-9)


# ── Materials, lights, scenes ─────────────────────────────────────────────────

@pytest.mark.parametrize("kwargs", [
    {"albedo": 1.5}, {"albedo": -0.1}, {"reflectance_ratio": 2.0}, {"roughness": 0.0},
])
def test_material_rejects_out_of_range(kwargs):
    with pytest.raises(ValueError):
        Material(**kwargs)


def test_textured_material():
    mat = Material(albedo=np.full((4, 4), 0.25))
    assert mat.textured
    assert mat.mean_albedo == pytest.approx(0.25)


def test_light_validation():
    with pytest.raises(ValueError):
        Light("area", (0, 0, 1), 1.0)
    with pytest.raises(ValueError):
        Light("directional", (0, 0, 0), 1.0)


def test_instance_rejects_unknown_role():
    with pytest.raises(ValueError):
        Instance(make_box((1, 1, 1)), role="hero")


def test_scene_bounds_and_centroid():
    a = Instance(make_box((1, 1, 1)), Pose.from_euler((0, 0, 0), (2, 0, 0)))
    b = Instance(make_box((1, 1, 1)), Pose.from_euler((0, 0, 0), (0, 0, 0)), role="background")
    scene = Scene((a, b))
    lo, hi = scene.bounds_of("target")
    np.testing.assert_allclose(lo, [1.5, -0.5, -0.5])
    np.testing.assert_allclose(scene.target_centroid(), [2.0, 0.0, 0.0])
    assert scene.bounds_of("floor") is None
    assert scene.triangle_count == 24


def test_negative_ambient_rejected():
    with pytest.raises(ValueError):
        Scene((), ambient_light=-1.0)


# ── Loading ───────────────────────────────────────────────────────────────────

def test_missing_file(tmp_path):
    with pytest.raises(AssetNotFoundError) as err:
        load_mesh(tmp_path / "nope.obj")
    assert "nope.obj" in str(err.value)
    assert isinstance(err.value, FileNotFoundError)


def test_unsupported_format(tmp_path):
    path = tmp_path / "cloud.xyz"
    path.write_text("0 0 0\n")
    with pytest.raises(MeshFormatError):
        load_mesh(path)


def test_load_obj(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 3 4\n")
    mesh = load_mesh(path, scale=0.001)
    assert mesh.triangle_count == 2
    assert mesh.vertex_normals is None
    np.testing.assert_allclose(mesh.vertices.max(axis=0), [0.001, 0.001, 0.0])


def test_obj_bad_vertex_names_line(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("# header\nv 0 0 0\nv 1 abc 0\nv 0 1 0\nf 1 2 3\n")
    with pytest.raises(MeshFormatError) as err:
        load_mesh(path)
    assert err.value.line == 3
    assert "line 3" in str(err.value)


def test_obj_face_index_past_end_names_line(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\nf 1 2 7\n")
    with pytest.raises(MeshFormatError) as err:
        load_mesh(path)
    assert err.value.line == 5


def test_load_ascii_ply_with_normals(tmp_path):
    path = tmp_path / "tri.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 3\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float nx\nproperty float ny\nproperty float nz\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
        "0 0 0 0 0 1\n1 0 0 0 0 1\n0 1 0 0 0 1\n3 0 1 2\n"
    )
    mesh = load_mesh(path)
    assert mesh.triangle_count == 1
    assert mesh.vertex_normals is not None


def test_ply_without_magic(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text("plx\nformat ascii 1.0\nend_header\n")
    with pytest.raises(MeshFormatError) as err:
        load_mesh(path)
    assert err.value.line == 1


def test_load_ascii_stl(tmp_path):
    path = tmp_path / "tri.stl"
    path.write_text(
        "solid t\nfacet normal 0 0 1\nouter loop\nvertex 0 0 0\nvertex 1 0 0\nvertex 0 1 0\n"
        "endloop\nendfacet\nendsolid t\n"
    )
    assert load_mesh(path).triangle_count == 1


def test_truncated_binary_stl_names_offset(tmp_path):
    path = tmp_path / "cut.stl"
    path.write_bytes(b"\0" * 80 + struct.pack("<I", 10) + b"\0" * 60)
    with pytest.raises(MeshFormatError) as err:
        load_mesh(path)
    assert err.value.offset == 144
