import numpy as np
import pytest

from meshspectra import Mesh, MeshError, load_mesh, save_off
from meshspectra.synthetic import tetrahedron, triangle_strip


def test_tetrahedron_counts(tet):
    assert tet.n_vertices == 4
    assert tet.n_edges == 6
    assert tet.n_faces == 4
    assert tet.euler_characteristic() == 2
    assert not tet.edge_boundary.any()


def test_edges_sorted_and_unique(tet):
    e = tet.edges
    assert (e[:, 0] < e[:, 1]).all()
    assert len(np.unique(e, axis=0)) == len(e)


def test_face_edges_opposite_convention(tet):
    # face_edges[f, m] joins the two corners of f other than corner m.
    for f in range(tet.n_faces):
        for m in range(3):
            e = tet.edges[tet.face_edges[f, m]]
            others = {int(tet.faces[f, t]) for t in range(3) if t != m}
            assert set(int(x) for x in e) == others


def test_edge_faces_incidence(tet):
    for e in range(tet.n_edges):
        for slot in (0, 1):
            f = tet.edge_faces[e, slot]
            assert f >= 0
            assert set(tet.edges[e]) <= set(tet.faces[f])


def test_boundary_detection():
    strip = triangle_strip()
    assert int(strip.edge_boundary.sum()) == 4
    assert strip.euler_characteristic() == 1


def test_edge_lengths_match_embedding(tet):
    d = tet.edge_lengths()
    ref = np.linalg.norm(
        tet.vertices[tet.edges[:, 1]] - tet.vertices[tet.edges[:, 0]], axis=1
    )
    np.testing.assert_allclose(d, ref)


def test_face_normals_unit(tet):
    n = tet.face_normals()
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0)


def test_repeated_vertex_rejected():
    with pytest.raises(MeshError, match="repeated"):
        Mesh(np.eye(3), np.array([[0, 1, 1]]))


def test_nonmanifold_edge_rejected():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, -1]], float)
    f = np.array([[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    with pytest.raises(MeshError, match="non-manifold"):
        Mesh(v, f)


def test_inconsistent_orientation_rejected():
    v = np.array([[0, 0, 0], [1, 0, 0], [0.5, 0.9, 0], [1.5, 0.9, 0]], float)
    f = np.array([[0, 1, 2], [1, 2, 3]])  # edge (1,2) traversed twice same way
    with pytest.raises(MeshError, match="orientation"):
        Mesh(v, f)


def test_zero_length_edge_rejected():
    v = np.array([[0, 0, 0], [0, 0, 0], [0, 1, 0]], float)
    with pytest.raises(MeshError, match="zero-length"):
        Mesh(v, np.array([[0, 1, 2]]))


def test_index_out_of_range_rejected():
    with pytest.raises(MeshError, match="out of range"):
        Mesh(np.eye(3), np.array([[0, 1, 3]]))


def test_off_roundtrip(tmp_path, tet):
    path = tmp_path / "tet.off"
    save_off(tet, path)
    back = load_mesh(path)
    np.testing.assert_allclose(back.vertices, tet.vertices)
    np.testing.assert_array_equal(back.faces, tet.faces)


def test_obj_loader(tmp_path):
    path = tmp_path / "strip.obj"
    path.write_text(
        "# comment\n"
        "v 0 0 0\nv 1 0 0\nv 0.5 0.9 0\nv 1.5 0.9 0\n"
        "f 1 2 3\n"
        "f -3/-3 -1/-1 -2/-2\n"   # negative indices: (1, 3, 2)
    )
    mesh = load_mesh(path)
    assert mesh.n_vertices == 4
    np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [1, 3, 2]])


def test_ply_loader_with_comment_and_extra_props(tmp_path):
    path = tmp_path / "tri.ply"
    path.write_text(
        "ply\nformat ascii 1.0\ncomment made by hand\n"
        "element vertex 3\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float quality\n"
        "element face 1\nproperty list uchar int vertex_indices\n"
        "end_header\n"
        "0 0 0 9\n1 0 0 9\n0 1 0 9\n"
        "3 0 1 2\n"
    )
    mesh = load_mesh(path)
    assert mesh.n_vertices == 3
    np.testing.assert_allclose(mesh.vertices[1], [1, 0, 0])


def test_binary_ply_rejected(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text("ply\nformat binary_little_endian 1.0\nend_header\n")
    with pytest.raises(MeshError, match="ascii"):
        load_mesh(path)


def test_malformed_off_rejected(tmp_path):
    path = tmp_path / "bad.off"
    path.write_text("OFF\n3 1 3\n0 0 zero\n1 0 0\n0 1 0\n3 0 1 2\n")
    with pytest.raises(MeshError, match="cannot parse"):
        load_mesh(path)


def test_quad_face_rejected(tmp_path):
    path = tmp_path / "quad.off"
    path.write_text("OFF\n4 1 4\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    with pytest.raises(MeshError, match="triangle"):
        load_mesh(path)


def test_unknown_format_rejected(tmp_path):
    path = tmp_path / "mesh.stl"
    path.write_text("solid\n")
    with pytest.raises(MeshError, match="unsupported"):
        load_mesh(path)


def test_format_override(tmp_path, tet):
    path = tmp_path / "tet.dat"
    save_off(tet, path)
    mesh = load_mesh(path, format="off")
    assert mesh.n_vertices == 4


def test_mesh_immutable(tet):
    with pytest.raises(Exception):
        tet.vertices = np.zeros((4, 3))
