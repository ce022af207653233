import numpy as np

from meshspectra.synthetic import (
    bumpy_sphere,
    compound_sector_labels,
    cylinder,
    icosahedron,
    icosphere,
    plane_grid,
    sphere_cylinder_compound,
    stretched_icosphere,
    tetrahedron,
)


def test_icosahedron_counts():
    ico = icosahedron()
    assert (ico.n_vertices, ico.n_edges, ico.n_faces) == (12, 30, 20)
    np.testing.assert_allclose(np.linalg.norm(ico.vertices, axis=1), 1.0)


def test_icosphere_subdivision_counts():
    assert icosphere(3).n_vertices == 642
    assert icosphere(4).n_vertices == 2562
    for s in (1, 2):
        m = icosphere(s)
        assert m.euler_characteristic() == 2
        assert not m.edge_boundary.any()
        np.testing.assert_allclose(np.linalg.norm(m.vertices, axis=1), 1.0)


def test_icosphere_radius():
    m = icosphere(2, radius=3.0)
    np.testing.assert_allclose(np.linalg.norm(m.vertices, axis=1), 3.0)


def test_stretched_icosphere():
    m = stretched_icosphere(2, z_scale=1.3)
    base = icosphere(2)
    np.testing.assert_allclose(m.vertices[:, :2], base.vertices[:, :2])
    np.testing.assert_allclose(m.vertices[:, 2], 1.3 * base.vertices[:, 2])


def test_bumpy_sphere_breaks_degeneracy():
    m = bumpy_sphere(2)
    assert m.n_vertices == 162
    r = np.linalg.norm(m.vertices, axis=1)
    assert r.std() > 0.01


def test_plane_grid():
    m = plane_grid(5, 4)
    assert m.n_vertices == 20
    assert m.n_faces == 2 * 4 * 3
    assert m.euler_characteristic() == 1   # disk
    assert m.edge_boundary.any()


def test_cylinder_open_and_capped():
    open_cyl = cylinder(segments=12, rings=4)
    assert open_cyl.edge_boundary.any()
    capped = cylinder(segments=12, rings=4, capped=True)
    assert not capped.edge_boundary.any()
    assert capped.euler_characteristic() == 2


def test_tetrahedron_scale():
    m = tetrahedron(scale=2.0)
    np.testing.assert_allclose(np.linalg.norm(m.vertices, axis=1), 2.0)


def test_compound_parts_and_sector_labels():
    mesh, parts = sphere_cylinder_compound()
    assert mesh.n_vertices == 852
    assert set(np.unique(parts)) == {0, 1}
    assert not mesh.edge_boundary.any()
    labels = compound_sector_labels(mesh, parts)
    assert set(np.unique(labels)) == {0, 1}
    # Quarter sectors alternate: both classes roughly balanced on each part.
    for p in (0, 1):
        frac = labels[parts == p].mean()
        assert 0.35 < frac < 0.65
