"""Principal curvature estimation and per-face curvature frames.

Per-vertex curvature tensors are fit by least squares over the one-ring
(normal-curvature samples along projected edge directions), then averaged
to faces with Voronoi-area weights and restricted to the face plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .meshio import Mesh

#: Curvature-difference threshold (relative) below which a face is treated
#: as umbilic and gets the canonical in-plane frame.
UMBILIC_REL_TOL = 1e-6


@dataclass(frozen=True)
class FaceFrames:
    """Orthonormal principal directions per face.

    ``v_max`` is the direction of larger absolute normal curvature, sign
    canonicalized (first nonzero component positive). Both vectors are unit,
    mutually orthogonal, and orthogonal to the face normal.
    """

    v_min: np.ndarray     # (F, 3)
    v_max: np.ndarray     # (F, 3)
    kappa_min: np.ndarray  # (F,)
    kappa_max: np.ndarray  # (F,)


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted vertex normals."""
    p = mesh.vertices[mesh.faces]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])  # 2*area-weighted
    n = np.zeros_like(mesh.vertices)
    for c in range(3):
        np.add.at(n, mesh.faces[:, c], fn)
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValueError(
            f"isolated vertex {int(np.flatnonzero(norms.ravel() == 0)[0])}"
        )
    return n / norms


def _tangent_basis(normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Any smooth-enough orthonormal pair perpendicular to each normal."""
    ref = np.zeros_like(normals)
    small = np.abs(normals).argmin(axis=1)
    ref[np.arange(len(normals)), small] = 1.0
    t1 = np.cross(normals, ref)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(normals, t1)
    return t1, t2


def vertex_curvature_tensors(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex 3x3 curvature tensors and sorted principal curvatures.

    Returns ``(tensors, kappas)`` where ``kappas[:, 0] >= kappas[:, 1]``.
    The tensor lives in the vertex tangent plane (zero along the normal).
    """
    v = mesh.vertices
    n = vertex_normals(mesh)
    t1, t2 = _tangent_basis(n)

    i = np.concatenate([mesh.edges[:, 0], mesh.edges[:, 1]])
    j = np.concatenate([mesh.edges[:, 1], mesh.edges[:, 0]])
    d = v[j] - v[i]
    dd = (d * d).sum(axis=1)
    # Normal curvature sample along each one-ring edge.
    kn = -2.0 * (n[i] * d).sum(axis=1) / dd
    # Edge direction in the tangent plane.
    u = (d * t1[i]).sum(axis=1)
    w = (d * t2[i]).sum(axis=1)
    r = np.hypot(u, w)
    r[r == 0] = 1.0
    cu, sw = u / r, w / r

    # Least-squares fit of m11 c^2 + 2 m12 c s + m22 s^2 = kn per vertex.
    design = np.stack([cu * cu, 2.0 * cu * sw, sw * sw], axis=1)
    nv = mesh.n_vertices
    AtA = np.zeros((nv, 3, 3))
    Atb = np.zeros((nv, 3))
    np.add.at(AtA, i, design[:, :, None] * design[:, None, :])
    np.add.at(Atb, i, design * kn[:, None])
    # Tikhonov floor keeps low-valence vertices solvable.
    AtA += 1e-12 * np.eye(3)
    coef = np.linalg.solve(AtA, Atb[:, :, None])[:, :, 0]

    M2 = np.empty((nv, 2, 2))
    M2[:, 0, 0] = coef[:, 0]
    M2[:, 0, 1] = M2[:, 1, 0] = coef[:, 1]
    M2[:, 1, 1] = coef[:, 2]
    evals = np.linalg.eigvalsh(M2)
    kappas = evals[:, ::-1]  # descending: kappa1 >= kappa2

    B = np.stack([t1, t2], axis=2)             # (n, 3, 2)
    tensors = B @ M2 @ B.transpose(0, 2, 1)     # (n, 3, 3)
    return tensors, kappas


def _canonical_inplane(normals: np.ndarray) -> np.ndarray:
    """Projection of the first global axis not parallel to the normal."""
    F = len(normals)
    out = np.empty((F, 3))
    for axis in (0, 1):
        e = np.zeros(3)
        e[axis] = 1.0
        proj = e - normals * normals[:, axis][:, None]
        norms = np.linalg.norm(proj, axis=1)
        if axis == 0:
            use = norms > 1e-6
            out[use] = proj[use] / norms[use, None]
            rest = ~use
        else:
            out[rest] = proj[rest] / norms[rest, None]
    return out


def _canonical_sign(vecs: np.ndarray) -> np.ndarray:
    """Flip vectors so their first component above tolerance is positive."""
    v = vecs.copy()
    sign = np.ones(len(v))
    undecided = np.ones(len(v), dtype=bool)
    for c in range(3):
        decisive = undecided & (np.abs(v[:, c]) > 1e-9)
        sign[decisive] = np.sign(v[decisive, c])
        undecided &= ~decisive
    return v * sign[:, None]


def curvature_frames(mesh: Mesh) -> tuple[FaceFrames, np.ndarray]:
    """Per-face principal frames and per-vertex principal curvatures.

    Vertex tensors are averaged to faces with vertex Voronoi-area weights,
    restricted to the face plane, and eigen-decomposed. Near-umbilic faces
    fall back to a canonical in-plane pair so the frame is reproducible.
    """
    from .geometry import geometry  # local import: avoids module cycle

    tensors, vkappas = vertex_curvature_tensors(mesh)
    geom = geometry(mesh)
    weights = np.maximum(geom.voronoi, geom.eps_area)

    f = mesh.faces
    wsum = weights[f].sum(axis=1)
    Mf = (
        (weights[f][:, :, None, None] * tensors[f]).sum(axis=1)
        / wsum[:, None, None]
    )

    normals = mesh.face_normals()
    b1 = _canonical_inplane(normals)
    b2 = np.cross(normals, b1)

    # Restrict to the face plane in basis (b1, b2).
    m11 = (b1[:, None, :] @ Mf @ b1[:, :, None]).ravel()
    m12 = (b1[:, None, :] @ Mf @ b2[:, :, None]).ravel()
    m22 = (b2[:, None, :] @ Mf @ b2[:, :, None]).ravel()
    M2 = np.empty((mesh.n_faces, 2, 2))
    M2[:, 0, 0] = m11
    M2[:, 0, 1] = M2[:, 1, 0] = 0.5 * (
        m12 + (b2[:, None, :] @ Mf @ b1[:, :, None]).ravel()
    )
    M2[:, 1, 1] = m22
    evals, evecs = np.linalg.eigh(M2)

    # Order by |kappa|: column 1 of eigh is the larger eigenvalue by value.
    big = np.abs(evals[:, 1]) >= np.abs(evals[:, 0])
    idx_max = np.where(big, 1, 0)
    idx_min = 1 - idx_max
    rows = np.arange(mesh.n_faces)
    k_max = evals[rows, idx_max]
    k_min = evals[rows, idx_min]
    cmax = evecs[rows, :, idx_max]
    cmin = evecs[rows, :, idx_min]
    v_max = cmax[:, 0:1] * b1 + cmax[:, 1:2] * b2
    v_min = cmin[:, 0:1] * b1 + cmin[:, 1:2] * b2

    scale = np.maximum(np.abs(k_max), 1.0)
    umbilic = np.abs(k_max - k_min) <= UMBILIC_REL_TOL * scale
    v_max[umbilic] = b1[umbilic]
    v_min[umbilic] = b2[umbilic]

    v_max = _canonical_sign(v_max)
    v_min = _canonical_sign(v_min)
    # Re-orthonormalize after averaging/projection round-off.
    v_max /= np.linalg.norm(v_max, axis=1, keepdims=True)
    v_min -= (v_min * v_max).sum(axis=1, keepdims=True) * v_max
    v_min /= np.linalg.norm(v_min, axis=1, keepdims=True)

    frames = FaceFrames(
        v_min=v_min, v_max=v_max, kappa_min=k_min, kappa_max=k_max
    )
    return frames, vkappas
