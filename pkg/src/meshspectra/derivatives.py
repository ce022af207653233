"""Element-level operator derivatives: sparse dW/dp and dA/dp.

The per-face kernels differentiate the assembly formulas directly with
respect to the face's three edge lengths (and, in the anisotropic case, the
conductivity parameters), all in terms of lengths via the intrinsic 2D face
layout. Central finite differences over the assembly routines are the
reference oracle for every kernel here.

Per-face index conventions match assembly: pair m is the edge opposite
corner m, ``L[f, m]`` its length.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .assembly import conductivity_entries
from .geometry import EdgeFlaps, GeometryCache
from .meshio import Mesh

_OFFDIAG = 1.0 - 2.0 * np.eye(3)  # (1 - 2 delta_tp)


def _heron_area_and_grad(L: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    L2 = L * L
    s = L2.sum(axis=1)
    q = s[:, None] - 2.0 * L2
    heron16 = 2.0 * (
        L2[:, 0] * L2[:, 1] + L2[:, 1] * L2[:, 2] + L2[:, 2] * L2[:, 0]
    ) - (L2 * L2).sum(axis=1)
    T = 0.25 * np.sqrt(heron16)
    Tp = L * q / (8.0 * T[:, None])
    return T, Tp


def iso_weight_jacobian(L: np.ndarray, T: np.ndarray) -> np.ndarray:
    """d(pair weight)/d(length): (F, 3, 3) with axes [face, pair t, length p].

    Pair weights are w_t = cot(angle_t)/2 = q_t / (8 T).
    """
    L2 = L * L
    q = L2.sum(axis=1)[:, None] - 2.0 * L2
    w = q / (8.0 * T[:, None])
    _, Tp = _heron_area_and_grad(L)
    term1 = 2.0 * L[:, None, :] * _OFFDIAG[None, :, :] / (8.0 * T[:, None, None])
    return term1 - w[:, :, None] * (Tp / T[:, None])[:, None, :]


def voronoi_jacobian(L: np.ndarray, T: np.ndarray) -> np.ndarray:
    """d(corner Voronoi area)/d(length): (F, 3, 3), axes [face, corner, length].

    Corner t collects (1/4) w_p l_p^2 over the two pairs p != t.
    """
    L2 = L * L
    q = L2.sum(axis=1)[:, None] - 2.0 * L2
    w = q / (8.0 * T[:, None])
    J = iso_weight_jacobian(L, T)
    dG = J * L2[:, :, None] + 2.0 * np.eye(3) * (L * w)[:, :, None]
    return 0.25 * (dG.sum(axis=1)[:, None, :] - dG)


class AnisoKernels(NamedTuple):
    weights: np.ndarray    # (F, 3) pair weights
    d_length: np.ndarray   # (F, 3, 3) d w_t / d l_p
    d_a1: np.ndarray       # (F, 3)
    d_a2: np.ndarray       # (F, 3)
    d_theta: np.ndarray    # (F, 3)


def aniso_kernels(
    L: np.ndarray, T: np.ndarray, phi: np.ndarray, face_aniso: np.ndarray
) -> AnisoKernels:
    """Anisotropic pair weights and all their parameter derivatives."""
    a, b, c = L[:, 0], L[:, 1], L[:, 2]
    _, Tp = _heron_area_and_grad(L)
    x = (c * c + b * b - a * a) / (2.0 * c)
    y = 2.0 * T / c
    h11, h12, h22 = conductivity_entries(phi, face_aniso)

    # Layout derivatives with respect to (l0, l1, l2) = (a, b, c).
    xp = np.stack(
        [-a / c, b / c, 0.5 - (b * b - a * a) / (2.0 * c * c)], axis=1
    )
    yp = 2.0 * Tp / c[:, None]
    yp[:, 2] -= 2.0 * T / (c * c)

    T4 = 4.0 * T
    N0 = c * (x * h11 + y * h12)
    N1 = c * ((c - x) * h11 - y * h12)
    N2 = -x * (c - x) * h11 + y * (2.0 * x - c) * h12 + y * y * h22
    w = np.stack([N0, N1, N2], axis=1) / T4[:, None]

    d2 = np.array([0.0, 0.0, 1.0])  # delta_{p,2}
    dN = np.empty((len(L), 3, 3))
    for p in range(3):
        dc = d2[p]
        dN[:, 0, p] = dc * (x * h11 + y * h12) + c * (xp[:, p] * h11 + yp[:, p] * h12)
        dN[:, 1, p] = dc * ((c - x) * h11 - y * h12) + c * (
            (dc - xp[:, p]) * h11 - yp[:, p] * h12
        )
        dN[:, 2, p] = (
            (-xp[:, p] * (c - x) - x * (dc - xp[:, p])) * h11
            + (yp[:, p] * (2.0 * x - c) + y * (2.0 * xp[:, p] - dc)) * h12
            + 2.0 * y * yp[:, p] * h22
        )
    d_length = dN / T4[:, None, None] - w[:, :, None] * (Tp / T[:, None])[:, None, :]

    # Coefficients of (h11, h12, h22) in each pair weight's numerator.
    C = np.empty((len(L), 3, 3))
    C[:, 0] = np.stack([c * x, c * y, np.zeros_like(c)], axis=1)
    C[:, 1] = np.stack([c * (c - x), -c * y, np.zeros_like(c)], axis=1)
    C[:, 2] = np.stack([-x * (c - x), y * (2.0 * x - c), y * y], axis=1)

    a1, a2, theta = face_aniso[:, 0], face_aniso[:, 1], face_aniso[:, 2]
    psi = phi + theta
    cp, sn = np.cos(psi), np.sin(psi)
    dh_a1 = np.stack([cp * cp, cp * sn, sn * sn], axis=1)
    dh_a2 = np.stack([sn * sn, -cp * sn, cp * cp], axis=1)
    contrast = a1 - a2
    dh_th = np.stack(
        [-contrast * np.sin(2 * psi), contrast * np.cos(2 * psi),
         contrast * np.sin(2 * psi)],
        axis=1,
    )

    def contract(dh):
        return (C * dh[:, None, :]).sum(axis=2) / T4[:, None]

    return AnisoKernels(
        weights=w,
        d_length=d_length,
        d_a1=contract(dh_a1),
        d_a2=contract(dh_a2),
        d_theta=contract(dh_th),
    )


@dataclass(frozen=True)
class ElementDerivative:
    """Sparse derivative of (W, A) with respect to one scalar parameter.

    ``dW`` (when present) is symmetric with zero row sums; ``dA_idx`` /
    ``dA_val`` give the affected diagonal mass entries. ``clamped`` marks
    derivatives whose mass part was zeroed by the Voronoi clamp.
    """

    family: str
    index: int
    dW: sp.csr_matrix | None = None
    dA_idx: np.ndarray | None = None
    dA_val: np.ndarray | None = None
    clamped: bool = False

    def dA_dense(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        if self.dA_idx is not None:
            np.add.at(out, self.dA_idx, self.dA_val)
        return out


def _build_dW(mesh: Mesh, entries: dict[int, float]) -> sp.csr_matrix:
    """Sparse symmetric dW from per-edge weight derivatives, with the
    diagonal set to minus the row sums."""
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    for e, dw in entries.items():
        i, j = (int(x) for x in mesh.edges[e])
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [dw, dw, -dw, -dw]
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _incident_faces(mesh: Mesh, flaps: EdgeFlaps, e: int):
    for slot in (0, 1):
        f = int(mesh.edge_faces[e, slot])
        if f >= 0:
            yield f, int(flaps.local_pair[e, slot])


def mass_metric_derivative(
    mesh: Mesh,
    flaps: EdgeFlaps,
    geom: GeometryCache,
    e: int,
    vertex_log_weight: np.ndarray | None = None,
) -> ElementDerivative:
    """dA/d(length of edge e): diagonal support on the <= 4 flap vertices."""
    acc: dict[int, float] = {}
    clamped = False
    for f, m in _incident_faces(mesh, flaps, e):
        L = geom.face_lengths[f : f + 1]
        T = geom.areas[f : f + 1]
        Jv = voronoi_jacobian(L, T)[0]        # (corner, length)
        for t in range(3):
            v = int(mesh.faces[f, t])
            if geom.voronoi_clamped[v]:
                clamped = True
                continue
            acc[v] = acc.get(v, 0.0) + Jv[t, m]
    idx = np.array(sorted(acc), dtype=np.int64)
    val = np.array([acc[v] for v in idx])
    if vertex_log_weight is not None:
        val = val * np.exp(np.asarray(vertex_log_weight)[idx])
    return ElementDerivative(
        family="edge", index=e, dA_idx=idx, dA_val=val, clamped=clamped
    )


def stiffness_metric_derivative_iso(
    mesh: Mesh, flaps: EdgeFlaps, geom: GeometryCache, e: int
) -> ElementDerivative:
    """dW/d(length of edge e): support on the flap's five edges + diagonals."""
    acc: dict[int, float] = {}
    for f, m in _incident_faces(mesh, flaps, e):
        L = geom.face_lengths[f : f + 1]
        T = geom.areas[f : f + 1]
        J = iso_weight_jacobian(L, T)[0]
        for t in range(3):
            ge = int(mesh.face_edges[f, t])
            acc[ge] = acc.get(ge, 0.0) + J[t, m]
    return ElementDerivative(family="edge", index=e, dW=_build_dW(mesh, acc))


def stiffness_metric_derivative_aniso(
    mesh: Mesh,
    flaps: EdgeFlaps,
    geom: GeometryCache,
    phi: np.ndarray,
    face_aniso: np.ndarray,
    e: int,
) -> ElementDerivative:
    """Anisotropic counterpart of the isotropic metric derivative."""
    acc: dict[int, float] = {}
    for f, m in _incident_faces(mesh, flaps, e):
        ker = aniso_kernels(
            geom.face_lengths[f : f + 1],
            geom.areas[f : f + 1],
            phi[f : f + 1],
            face_aniso[f : f + 1],
        )
        for t in range(3):
            ge = int(mesh.face_edges[f, t])
            acc[ge] = acc.get(ge, 0.0) + ker.d_length[0, t, m]
    return ElementDerivative(family="edge", index=e, dW=_build_dW(mesh, acc))


def stiffness_aniso_derivative(
    mesh: Mesh,
    geom: GeometryCache,
    phi: np.ndarray,
    face_aniso: np.ndarray,
    f: int,
    direction: str,
) -> ElementDerivative:
    """dW/d a1 or dW/d a2 for one face (affine in the factors)."""
    if direction not in ("a1", "a2"):
        raise ValueError("direction must be 'a1' or 'a2'")
    ker = aniso_kernels(
        geom.face_lengths[f : f + 1],
        geom.areas[f : f + 1],
        phi[f : f + 1],
        face_aniso[f : f + 1],
    )
    dw = ker.d_a1[0] if direction == "a1" else ker.d_a2[0]
    acc = {int(mesh.face_edges[f, t]): float(dw[t]) for t in range(3)}
    return ElementDerivative(family=direction, index=f, dW=_build_dW(mesh, acc))


def stiffness_rotation_derivative(
    mesh: Mesh,
    geom: GeometryCache,
    phi: np.ndarray,
    face_aniso: np.ndarray,
    f: int,
) -> ElementDerivative:
    """dW/d theta for one face; identically zero when a1 = a2."""
    ker = aniso_kernels(
        geom.face_lengths[f : f + 1],
        geom.areas[f : f + 1],
        phi[f : f + 1],
        face_aniso[f : f + 1],
    )
    acc = {int(mesh.face_edges[f, t]): float(ker.d_theta[0, t]) for t in range(3)}
    return ElementDerivative(family="theta", index=f, dW=_build_dW(mesh, acc))


def mass_weight_derivative(v: int, A: np.ndarray) -> ElementDerivative:
    """dA/d(vertex log weight): the single diagonal entry A_ii itself."""
    return ElementDerivative(
        family="vertex",
        index=v,
        dA_idx=np.array([v], dtype=np.int64),
        dA_val=np.array([A[v]]),
    )


def dot_sign(
    corner: np.ndarray,
    end_i: np.ndarray,
    end_j: np.ndarray,
    direction: np.ndarray,
) -> float:
    """Orientation sign of an edge pair against a principal direction.

    Product of the two cross products (corner->i x corner->j) and
    (corner->j x direction); a vanishing product resolves to +1.
    """
    e_ki = np.asarray(end_i, dtype=float) - corner
    e_kj = np.asarray(end_j, dtype=float) - corner
    s = np.dot(np.cross(e_ki, e_kj), np.cross(e_kj, np.asarray(direction, dtype=float)))
    return -1.0 if s < 0 else 1.0
