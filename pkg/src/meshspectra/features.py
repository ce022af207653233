"""Intrinsic input features: mean/Gaussian curvature, shape index, curvedness.

Vertex features are interpolated to edges and faces by plain arithmetic
means and standardized per mesh (one mesh = one batch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curvature import curvature_frames
from .meshio import Mesh

CHANNELS = ("mean_curvature", "gauss_curvature", "shape_index", "curvedness")

#: |kappa1 - kappa2| below this (relative) counts as umbilic: S is set to 0.
UMBILIC_TOL = 1e-8


@dataclass(frozen=True)
class FeatureField:
    """Per-element feature matrix with channel names.

    ``kind`` is "vertex", "edge", or "face"; rows follow the mesh's element
    ordering.
    """

    kind: str
    values: np.ndarray
    channels: tuple = CHANNELS


def _koenderink(kappas: np.ndarray) -> np.ndarray:
    """(H, K, S, C) from sorted principal curvatures (kappa1 >= kappa2)."""
    k1, k2 = kappas[:, 0], kappas[:, 1]
    H = 0.5 * (k1 + k2)
    K = k1 * k2
    C = np.sqrt(0.5 * (k1 * k1 + k2 * k2))
    diff = k2 - k1
    umb = np.abs(diff) <= UMBILIC_TOL * np.maximum(1.0, np.abs(k1) + np.abs(k2))
    S = np.zeros_like(k1)
    nz = ~umb
    S[nz] = (2.0 / np.pi) * np.arctan((k2[nz] + k1[nz]) / diff[nz])
    return np.stack([H, K, S, C], axis=1)


def standardize(values: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per channel; constant channels stay centered."""
    mu = values.mean(axis=0)
    sd = values.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    return (values - mu) / sd


def intrinsic_features(
    mesh: Mesh,
    vertex_kappas: np.ndarray | None = None,
    standardized: bool = True,
) -> FeatureField:
    """Per-vertex (H, K, S, C), standardized over the mesh by default."""
    if vertex_kappas is None:
        _, vertex_kappas = curvature_frames(mesh)
    vals = _koenderink(vertex_kappas)
    if standardized:
        vals = standardize(vals)
    return FeatureField(kind="vertex", values=vals)


def interpolate_to_edges(mesh: Mesh, field: FeatureField) -> FeatureField:
    if field.kind != "vertex":
        raise ValueError("interpolation starts from vertex features")
    vals = 0.5 * (field.values[mesh.edges[:, 0]] + field.values[mesh.edges[:, 1]])
    return FeatureField(kind="edge", values=vals, channels=field.channels)


def interpolate_to_faces(mesh: Mesh, field: FeatureField) -> FeatureField:
    if field.kind != "vertex":
        raise ValueError("interpolation starts from vertex features")
    vals = field.values[mesh.faces].mean(axis=1)
    return FeatureField(kind="face", values=vals, channels=field.channels)


def element_coordinates(mesh: Mesh, kind: str) -> np.ndarray:
    """Representative coordinates: vertices themselves, edge/face midpoints."""
    if kind == "vertex":
        return mesh.vertices
    if kind == "edge":
        return 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    if kind == "face":
        return mesh.vertices[mesh.faces].mean(axis=1)
    raise ValueError(f"unknown element kind {kind!r}")
