import numpy as np
import pytest

from meshspectra import build_flaps, geometry
from meshspectra.assembly import anisotropic_face_weights
from meshspectra.derivatives import (
    aniso_kernels,
    iso_weight_jacobian,
    mass_metric_derivative,
    mass_weight_derivative,
    stiffness_aniso_derivative,
    stiffness_metric_derivative_iso,
    stiffness_rotation_derivative,
    voronoi_jacobian,
    _heron_area_and_grad,
)

H = 1e-6


def random_face_lengths(rng, n):
    """Valid triangles built from two sides and an included angle."""
    a = rng.uniform(0.5, 2.0, n)
    b = rng.uniform(0.5, 2.0, n)
    ang = rng.uniform(0.3, 2.6, n)
    c = np.sqrt(a * a + b * b - 2 * a * b * np.cos(ang))
    return np.stack([a, b, c], axis=1)


def geom_of(L):
    L2 = L * L
    heron16 = 2.0 * (
        L2[:, 0] * L2[:, 1] + L2[:, 1] * L2[:, 2] + L2[:, 2] * L2[:, 0]
    ) - (L2 * L2).sum(axis=1)
    return 0.25 * np.sqrt(heron16)


def iso_weights(L):
    L2 = L * L
    q = L2.sum(axis=1)[:, None] - 2.0 * L2
    return q / (8.0 * geom_of(L)[:, None])


def corner_voronoi(L):
    L2 = L * L
    w = iso_weights(L)
    g = w * L2 / 4.0
    return g.sum(axis=1)[:, None] - g


def fd_jacobian(func, L, h=H):
    """Central FD of a per-face (F, 3) map over the three lengths."""
    F = len(L)
    out = np.empty((F, 3, 3))
    for p in range(3):
        Lp, Lm = L.copy(), L.copy()
        Lp[:, p] += h
        Lm[:, p] -= h
        out[:, :, p] = (func(Lp) - func(Lm)) / (2 * h)
    return out


@pytest.fixture(scope="module")
def L():
    return random_face_lengths(np.random.default_rng(0), 40)


def test_heron_gradient(L):
    T, Tp = _heron_area_and_grad(L)
    np.testing.assert_allclose(T, geom_of(L), rtol=1e-12)
    fd = np.empty_like(Tp)
    for p in range(3):
        Lp, Lm = L.copy(), L.copy()
        Lp[:, p] += H
        Lm[:, p] -= H
        fd[:, p] = (geom_of(Lp) - geom_of(Lm)) / (2 * H)
    np.testing.assert_allclose(Tp, fd, atol=1e-7)


def test_iso_weight_jacobian(L):
    J = iso_weight_jacobian(L, geom_of(L))
    np.testing.assert_allclose(J, fd_jacobian(iso_weights, L), atol=1e-7)


def test_voronoi_jacobian(L):
    J = voronoi_jacobian(L, geom_of(L))
    np.testing.assert_allclose(J, fd_jacobian(corner_voronoi, L), atol=1e-7)


@pytest.fixture(scope="module")
def aniso_setup(L):
    rng = np.random.default_rng(1)
    phi = rng.uniform(-np.pi, np.pi, len(L))
    aniso = np.stack(
        [
            np.exp(0.4 * rng.standard_normal(len(L))),
            np.exp(0.4 * rng.standard_normal(len(L))),
            rng.uniform(-1.0, 1.0, len(L)),
        ],
        axis=1,
    )
    return phi, aniso


def aniso_weights_of(L, phi, aniso):
    from meshspectra.geometry import GeometryCache

    # anisotropic_face_weights only touches face_lengths and areas.
    class G:
        pass

    g = G()
    g.face_lengths = L
    g.areas = geom_of(L)
    return anisotropic_face_weights(g, phi, aniso)


def test_aniso_reduces_to_iso(L):
    phi = np.zeros(len(L))
    aniso = np.zeros((len(L), 3))
    aniso[:, :2] = 1.0
    ker = aniso_kernels(L, geom_of(L), phi, aniso)
    np.testing.assert_allclose(ker.weights, iso_weights(L), atol=1e-13)
    np.testing.assert_allclose(
        ker.d_length, iso_weight_jacobian(L, geom_of(L)), atol=1e-12
    )
    np.testing.assert_allclose(ker.d_theta, 0.0, atol=1e-13)


def test_aniso_length_jacobian(L, aniso_setup):
    phi, aniso = aniso_setup
    ker = aniso_kernels(L, geom_of(L), phi, aniso)
    fd = fd_jacobian(lambda X: aniso_weights_of(X, phi, aniso), L)
    np.testing.assert_allclose(ker.d_length, fd, atol=1e-6)


def test_aniso_parameter_derivatives(L, aniso_setup):
    phi, aniso = aniso_setup
    ker = aniso_kernels(L, geom_of(L), phi, aniso)
    for col, an in ((0, ker.d_a1), (1, ker.d_a2), (2, ker.d_theta)):
        ap, am = aniso.copy(), aniso.copy()
        ap[:, col] += H
        am[:, col] -= H
        fd = (aniso_weights_of(L, phi, ap) - aniso_weights_of(L, phi, am)) / (2 * H)
        np.testing.assert_allclose(an, fd, atol=1e-7)


def test_theta_period_pi(L, aniso_setup):
    phi, aniso = aniso_setup
    shifted = aniso.copy()
    shifted[:, 2] += np.pi
    np.testing.assert_allclose(
        aniso_weights_of(L, phi, aniso),
        aniso_weights_of(L, phi, shifted),
        atol=1e-12,
    )


def test_element_derivative_structure(bumpy, bumpy_asm):
    flaps = build_flaps(bumpy)
    geom = bumpy_asm.geom
    for e in (0, 11, 101):
        dW = stiffness_metric_derivative_iso(bumpy, flaps, geom, e).dW
        assert abs(dW - dW.T).max() < 1e-14
        np.testing.assert_allclose(
            np.asarray(dW.sum(axis=1)).ravel(), 0.0, atol=1e-13
        )
        dA = mass_metric_derivative(bumpy, flaps, geom, e)
        assert len(dA.dA_idx) <= 4
        flap_verts = set(bumpy.edges[e])
        for f in bumpy.edge_faces[e]:
            flap_verts |= set(bumpy.faces[f])
        assert set(int(v) for v in dA.dA_idx) <= flap_verts


def test_aniso_element_derivatives_zero_rowsum(bumpy, bumpy_asm):
    from meshspectra.assembly import frame_angles
    from meshspectra.curvature import curvature_frames

    frames, _ = curvature_frames(bumpy)
    phi = frame_angles(bumpy, frames)
    rng = np.random.default_rng(2)
    aniso = np.stack(
        [
            np.exp(0.2 * rng.standard_normal(bumpy.n_faces)),
            np.exp(0.2 * rng.standard_normal(bumpy.n_faces)),
            rng.uniform(-1, 1, bumpy.n_faces),
        ],
        axis=1,
    )
    geom = bumpy_asm.geom
    for f in (0, 55):
        for deriv in (
            stiffness_aniso_derivative(bumpy, geom, phi, aniso, f, "a1"),
            stiffness_aniso_derivative(bumpy, geom, phi, aniso, f, "a2"),
            stiffness_rotation_derivative(bumpy, geom, phi, aniso, f),
        ):
            np.testing.assert_allclose(
                np.asarray(deriv.dW.sum(axis=1)).ravel(), 0.0, atol=1e-13
            )


def test_mass_weight_derivative(bumpy_asm):
    d = mass_weight_derivative(5, bumpy_asm.ops.A)
    assert d.dA_idx.tolist() == [5]
    assert d.dA_val[0] == bumpy_asm.ops.A[5]
    dense = d.dA_dense(bumpy_asm.ops.n)
    assert dense[5] == bumpy_asm.ops.A[5]
    assert np.count_nonzero(dense) == 1
