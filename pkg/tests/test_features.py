import numpy as np
import pytest

from meshspectra import intrinsic_features
from meshspectra.features import (
    element_coordinates,
    interpolate_to_edges,
    interpolate_to_faces,
    standardize,
)
from meshspectra.synthetic import icosphere


def test_sphere_features_unstandardized():
    m = icosphere(3)
    field = intrinsic_features(m, standardized=False)
    H, K, S, C = field.values.T
    np.testing.assert_allclose(H, 1.0, atol=0.05)
    np.testing.assert_allclose(K, 1.0, atol=0.1)
    np.testing.assert_allclose(C, 1.0, atol=0.05)
    # Umbilic points report shape index 0 (near-equal curvatures may land
    # anywhere in [-1, 1] numerically; the sphere is the extreme case).
    assert np.abs(S).max() <= 1.0


def test_standardize():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((100, 4)) * [1, 5, 0.2, 3] + [2, -1, 0, 7]
    z = standardize(x)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-12)


def test_standardize_constant_channel():
    x = np.ones((10, 2))
    z = standardize(x)
    np.testing.assert_allclose(z, 0.0)


def test_standardized_by_default(bumpy):
    field = intrinsic_features(bumpy)
    np.testing.assert_allclose(field.values.mean(axis=0), 0.0, atol=1e-10)


def test_interpolation(bumpy):
    field = intrinsic_features(bumpy)
    ef = interpolate_to_edges(bumpy, field)
    ff = interpolate_to_faces(bumpy, field)
    assert ef.values.shape == (bumpy.n_edges, 4)
    assert ff.values.shape == (bumpy.n_faces, 4)
    e = 7
    i, j = bumpy.edges[e]
    np.testing.assert_allclose(
        ef.values[e], 0.5 * (field.values[i] + field.values[j])
    )
    with pytest.raises(ValueError):
        interpolate_to_edges(bumpy, ef)


def test_element_coordinates(bumpy):
    np.testing.assert_array_equal(
        element_coordinates(bumpy, "vertex"), bumpy.vertices
    )
    ec = element_coordinates(bumpy, "edge")
    assert ec.shape == (bumpy.n_edges, 3)
    fc = element_coordinates(bumpy, "face")
    assert fc.shape == (bumpy.n_faces, 3)
    with pytest.raises(ValueError):
        element_coordinates(bumpy, "corner")
