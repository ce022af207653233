import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshspectra import Mesh, build_flaps, geometry, surface_area
from meshspectra.geometry import GeometryError, obtuse_fraction
from meshspectra.synthetic import single_triangle, tetrahedron, triangle_strip


def embedding_areas(mesh):
    p = mesh.vertices[mesh.faces]
    return 0.5 * np.linalg.norm(
        np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1
    )


def test_angles_sum_to_pi(bumpy):
    geom = geometry(bumpy)
    np.testing.assert_allclose(geom.angles.sum(axis=1), np.pi, atol=1e-12)


def test_areas_match_embedding(bumpy):
    geom = geometry(bumpy)
    np.testing.assert_allclose(geom.areas, embedding_areas(bumpy), rtol=1e-12)


def test_cot_matches_angles(bumpy):
    geom = geometry(bumpy)
    np.testing.assert_allclose(geom.cot, 1.0 / np.tan(geom.angles), rtol=1e-9)


def test_voronoi_sums_to_area(bumpy):
    geom = geometry(bumpy)
    assert abs(geom.voronoi_raw.sum() - geom.areas.sum()) < 1e-10 * geom.areas.sum()


def test_equilateral_triangle():
    geom = geometry(single_triangle())
    np.testing.assert_allclose(geom.angles, np.pi / 3, atol=1e-12)
    np.testing.assert_allclose(geom.areas, np.sqrt(3) / 4, rtol=1e-12)
    # Each corner gets a third of the area.
    np.testing.assert_allclose(geom.corner_voronoi, geom.areas[0] / 3, rtol=1e-12)


def test_metric_override_scales_areas(bumpy):
    base = geometry(bumpy)
    scaled = geometry(bumpy, 2.0 * bumpy.edge_lengths())
    np.testing.assert_allclose(scaled.areas, 4.0 * base.areas, rtol=1e-12)
    np.testing.assert_allclose(scaled.angles, base.angles, atol=1e-10)


def test_metric_shape_validated(tet):
    with pytest.raises(ValueError, match="shape"):
        geometry(tet, np.ones(3))


def test_nonpositive_metric_rejected(tet):
    bad = tet.edge_lengths()
    bad[2] = 0.0
    with pytest.raises(GeometryError, match="non-positive"):
        geometry(tet, bad)


def test_triangle_inequality_rejected(tet):
    bad = tet.edge_lengths()
    bad[0] = 100.0
    with pytest.raises(GeometryError, match="triangle inequality"):
        geometry(tet, bad)


@settings(max_examples=60, deadline=None)
@given(
    a=st.floats(0.2, 5.0),
    b=st.floats(0.2, 5.0),
    t=st.floats(0.05, 0.95),
)
def test_random_triangle_properties(a, b, t):
    # Build a valid triangle directly: two sides and the included angle.
    ang = t * np.pi
    v = np.array([[0, 0, 0], [a, 0, 0], [b * np.cos(ang), b * np.sin(ang), 0]])
    mesh = Mesh(v, np.array([[0, 1, 2]]))
    geom = geometry(mesh)
    assert abs(geom.angles.sum() - np.pi) < 1e-9
    area_ref = 0.5 * a * b * np.sin(ang)
    assert abs(geom.areas[0] - area_ref) < 1e-9 * max(area_ref, 1.0)
    assert abs(geom.voronoi_raw.sum() - area_ref) < 1e-9 * max(area_ref, 1.0)


def test_flaps_interior_edge():
    strip = triangle_strip()
    flaps = build_flaps(strip)
    geom = geometry(strip)
    interior = int(np.flatnonzero(~strip.edge_boundary)[0])
    rec = flaps.flap(interior, geom)
    assert rec.interior
    assert {rec.i, rec.j} == set(int(x) for x in strip.edges[interior])
    assert rec.k1 not in (rec.i, rec.j)
    assert rec.k2 not in (rec.i, rec.j, rec.k1)
    assert rec.alpha1 is not None and rec.alpha2 is not None
    # Angles of each flap triangle sum to pi.
    assert abs(rec.alpha1 + rec.gamma1 + rec.delta1 - np.pi) < 1e-12
    assert abs(rec.alpha2 + rec.gamma2 + rec.delta2 - np.pi) < 1e-12


def test_flaps_boundary_edge():
    strip = triangle_strip()
    flaps = build_flaps(strip)
    boundary = int(np.flatnonzero(strip.edge_boundary)[0])
    rec = flaps.flap(boundary)
    assert not rec.interior
    assert rec.k2 == -1


def test_flaps_local_pair_consistent(bumpy):
    flaps = build_flaps(bumpy)
    for e in range(0, bumpy.n_edges, 37):
        for slot in (0, 1):
            f = bumpy.edge_faces[e, slot]
            if f < 0:
                continue
            m = flaps.local_pair[e, slot]
            assert bumpy.face_edges[f, m] == e
            assert flaps.opposite[e, slot] == bumpy.faces[f, m]


def test_surface_area_and_obtuse(tet):
    geom = geometry(tet)
    # Four equilateral faces of side sqrt(8/3).
    side = tet.edge_lengths()[0]
    np.testing.assert_allclose(
        surface_area(geom), 4 * np.sqrt(3) / 4 * side**2, rtol=1e-12
    )
    assert obtuse_fraction(geom) == 0.0
