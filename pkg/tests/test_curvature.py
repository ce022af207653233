import numpy as np

from meshspectra import curvature_frames, vertex_normals
from meshspectra.curvature import vertex_curvature_tensors
from meshspectra.synthetic import cylinder, icosphere


def test_vertex_normals_sphere():
    m = icosphere(3)
    n = vertex_normals(m)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12)
    # Outward normals of a unit sphere point along the position vector.
    align = (n * m.vertices).sum(axis=1)
    assert align.min() > 0.999


def test_sphere_curvature_unit():
    m = icosphere(3)
    _, kappas = vertex_curvature_tensors(m)
    np.testing.assert_allclose(kappas, 1.0, atol=0.05)


def test_sphere_tensor_in_tangent_plane():
    m = icosphere(2)
    tensors, _ = vertex_curvature_tensors(m)
    n = vertex_normals(m)
    along_normal = np.einsum("vij,vj->vi", tensors, n)
    assert np.abs(along_normal).max() < 1e-9


def test_cylinder_principal_directions():
    m = cylinder(radius=1.0, height=4.0, segments=48, rings=16)
    frames, kappas = curvature_frames(m)
    # Interior faces: kappa_max ~ 1/r circumferential, kappa_min ~ 0 axial.
    centers = m.vertices[m.faces].mean(axis=1)
    interior = np.abs(centers[:, 2]) < 1.0
    np.testing.assert_allclose(frames.kappa_max[interior], 1.0, atol=0.05)
    np.testing.assert_allclose(frames.kappa_min[interior], 0.0, atol=0.05)
    axial = np.abs(frames.v_min[interior, 2])
    assert axial.min() > 0.99


def test_frames_orthonormal(bumpy):
    frames, _ = curvature_frames(bumpy)
    np.testing.assert_allclose(
        np.linalg.norm(frames.v_min, axis=1), 1.0, atol=1e-10
    )
    np.testing.assert_allclose(
        np.linalg.norm(frames.v_max, axis=1), 1.0, atol=1e-10
    )
    dots = (frames.v_min * frames.v_max).sum(axis=1)
    assert np.abs(dots).max() < 1e-10
    nrm = bumpy.face_normals()
    assert np.abs((frames.v_min * nrm).sum(axis=1)).max() < 1e-6
    assert np.abs((frames.v_max * nrm).sum(axis=1)).max() < 1e-6


def test_abs_curvature_ordering(bumpy):
    frames, _ = curvature_frames(bumpy)
    assert (np.abs(frames.kappa_max) >= np.abs(frames.kappa_min) - 1e-12).all()


def test_frames_deterministic(bumpy):
    f1, k1 = curvature_frames(bumpy)
    f2, k2 = curvature_frames(bumpy)
    np.testing.assert_array_equal(f1.v_min, f2.v_min)
    np.testing.assert_array_equal(f1.v_max, f2.v_max)
    np.testing.assert_array_equal(k1, k2)
