"""Stiffness/mass assembly: standard cotangent, metric-reweighted,
anisotropic (principal-curvature-aligned conductivity), and weighted mass,
plus the triangle-inequality projection for reweighted metrics.

Sign convention for the stiffness matrix W: positive off-diagonal cotangent
weights, diagonal equal to minus the row sum, so -W is positive
semidefinite.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .curvature import FaceFrames
from .geometry import GeometryCache, geometry
from .meshio import Mesh


@dataclass(frozen=True)
class OperatorParams:
    """Everything the learner modifies, in unconstrained parameterization.

    Edge scales and vertex weights are multiplicative in log space:
    the effective length is ``d_ij * exp(edge_log_scale)`` and the mass entry
    is scaled by ``exp(vertex_log_weight)``. ``face_aniso`` columns are
    (a1, a2, theta): the two positive directional conductivity factors
    (a1 on the minimum-curvature direction, a2 on the maximum) and the
    in-plane rotation, interpreted modulo pi.
    """

    edge_log_scale: np.ndarray    # (E,)
    face_aniso: np.ndarray        # (F, 3)
    vertex_log_weight: np.ndarray  # (n,)

    def __post_init__(self):
        a = self.face_aniso
        if a.size and (a[:, :2] <= 0).any():
            raise ValueError("anisotropic factors a1, a2 must be strictly positive")

    @classmethod
    def identity(cls, mesh: Mesh) -> "OperatorParams":
        aniso = np.zeros((mesh.n_faces, 3))
        aniso[:, :2] = 1.0
        return cls(
            edge_log_scale=np.zeros(mesh.n_edges),
            face_aniso=aniso,
            vertex_log_weight=np.zeros(mesh.n_vertices),
        )


@dataclass(frozen=True)
class OperatorPair:
    """Sparse symmetric stiffness W and diagonal mass vector A."""

    W: sp.csr_matrix
    A: np.ndarray

    @property
    def n(self) -> int:
        return len(self.A)


@dataclass
class FixMetricTrace:
    """Record of one fix_metric run, kept for the backward pass.

    ``updates`` lists (face, violating_pair) in application order for the
    last sweep that modified any length; empty when the input was already
    valid.
    """

    altered: bool = False
    sweeps: int = 0
    updates: list = field(default_factory=list)
    worst_violation: float = 0.0


class MetricProjectionError(RuntimeError):
    """fix_metric failed to converge within the sweep budget."""


def fix_metric(
    mesh: Mesh,
    target_lengths: np.ndarray,
    eps: float = 0.0,
    max_sweeps: int = 100,
) -> tuple[np.ndarray, FixMetricTrace]:
    """Project target edge lengths onto the set satisfying every face's
    triangle inequality with margin ``eps``.

    Cyclic sweeps over faces in index order; within a face the three
    rotations are checked in pair order. Each violating rotation gets the
    correction ``(l_m - l_p - l_r + eps) / 3`` subtracted from the long edge
    and added to the other two, which restores that face's margin to exactly
    ``eps``. A fixed point of the iteration is any already-valid input.
    """
    d = np.asarray(target_lengths, dtype=np.float64).copy()
    if (d <= 0).any():
        raise ValueError("target lengths must be strictly positive")
    trace = FixMetricTrace()
    fe = mesh.face_edges
    tiny = 1e-15 * max(float(d.mean()), 1.0) if len(d) else 0.0
    for sweep in range(1, max_sweeps + 1):
        sweep_updates = []
        for f in range(mesh.n_faces):
            e = fe[f]
            for m in range(3):
                l = d[e]
                c = (2.0 * l[m] - l.sum() + eps) / 3.0
                if c > tiny:
                    d[e] += c
                    d[e[m]] -= 2.0 * c
                    sweep_updates.append((f, m))
        trace.sweeps = sweep
        if not sweep_updates:
            break
        trace.altered = True
        trace.updates = sweep_updates
    else:
        L = d[fe]
        viol = float(np.max(2.0 * L - L.sum(axis=1) + eps))
        trace.worst_violation = viol
        raise MetricProjectionError(
            f"metric projection did not converge in {max_sweeps} sweeps; "
            f"worst violation {viol:.3e}"
        )
    return d, trace


def backprop_fix_metric(
    mesh: Mesh, trace: FixMetricTrace, grad_out: np.ndarray
) -> np.ndarray:
    """Pull a per-edge gradient back through the last recorded sweep.

    Each forward update was linear: ``l_m -= c``, ``l_p += c``, ``l_r += c``
    with ``c = (l_m - l_p - l_r + eps)/3``, i.e. the +-1/3, -+2/3 stencil.
    The transposed maps are applied in reverse order. Earlier sweeps are
    treated as identity, matching the single-sweep linearization the
    forward trace records.
    """
    g = np.asarray(grad_out, dtype=np.float64).copy()
    fe = mesh.face_edges
    for f, m in reversed(trace.updates):
        e = fe[f]
        # Forward Jacobian rows (outputs) in terms of inputs, for the face's
        # three lengths with the violator at position m:
        #   l_m' = 2/3 l_m + 1/3 l_p + 1/3 l_r
        #   l_p' = 1/3 l_m + 2/3 l_p - 1/3 l_r   (and symmetrically l_r')
        # The transpose is the same stencil, applied to the gradient.
        gm = g[e[m]]
        others = [e[t] for t in range(3) if t != m]
        gp, gr = g[others[0]], g[others[1]]
        g[e[m]] = (2.0 * gm + gp + gr) / 3.0
        g[others[0]] = (gm + 2.0 * gp - gr) / 3.0
        g[others[1]] = (gm - gp + 2.0 * gr) / 3.0
    return g


def _scatter_symmetric(
    mesh: Mesh, edge_weights: np.ndarray
) -> sp.csr_matrix:
    """Build W from per-edge weights with explicit (pattern-stable) zeros."""
    n = mesh.n_vertices
    i, j = mesh.edges[:, 0], mesh.edges[:, 1]
    diag = np.zeros(n)
    np.add.at(diag, i, edge_weights)
    np.add.at(diag, j, edge_weights)
    rows = np.concatenate([i, j, np.arange(n)])
    cols = np.concatenate([j, i, np.arange(n)])
    vals = np.concatenate([edge_weights, edge_weights, -diag])
    W = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    # coo->csr sums duplicates; pattern stays adjacency + diagonal because
    # explicit zeros are kept.
    return W


def assemble_stiffness(mesh: Mesh, geom: GeometryCache) -> sp.csr_matrix:
    """Cotangent stiffness: W(i,j) = (cot a1 + cot a2)/2 on edges."""
    w = geom.cot / 2.0
    edge_w = np.zeros(mesh.n_edges)
    np.add.at(edge_w, mesh.face_edges.ravel(), w.ravel())
    return _scatter_symmetric(mesh, edge_w)


def assemble_mass(
    geom: GeometryCache, vertex_log_weight: np.ndarray | None = None
) -> np.ndarray:
    """Diagonal mass: clamped Voronoi area times exp(vertex weight)."""
    A = geom.voronoi.copy()
    if vertex_log_weight is not None:
        A = A * np.exp(np.asarray(vertex_log_weight, dtype=np.float64))
    return A


def frame_angles(mesh: Mesh, frames: FaceFrames) -> np.ndarray:
    """Angle of the minimum-curvature direction in each face's layout frame.

    The layout frame has its x axis along corner0 -> corner1 and its
    orientation fixed by the face normal, which matches the intrinsic 2D
    unfolding used by the anisotropic assembly.
    """
    p = mesh.vertices[mesh.faces]
    ex = p[:, 1] - p[:, 0]
    ex = ex / np.linalg.norm(ex, axis=1, keepdims=True)
    nrm = mesh.face_normals()
    ey = np.cross(nrm, ex)
    vm = frames.v_min
    return np.arctan2((vm * ey).sum(axis=1), (vm * ex).sum(axis=1))


def _face_layout(geom: GeometryCache):
    """2D unfolding of every face: corner0 at the origin, corner1 at (c, 0),
    corner2 at (x, y) with y > 0. Functions of edge lengths only."""
    L = geom.face_lengths
    a, b, c = L[:, 0], L[:, 1], L[:, 2]
    x = (c * c + b * b - a * a) / (2.0 * c)
    y = 2.0 * geom.areas / c
    return x, y


def conductivity_entries(
    phi: np.ndarray, face_aniso: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """In-plane conductivity tensor (h11, h12, h22) in the layout frame.

    The tensor is a1 on the rotated minimum-curvature direction and a2 on
    the rotated maximum direction; ``phi`` is the frame angle from
    :func:`frame_angles` and theta is added to it, giving the tensor a
    period of pi in theta.
    """
    a1, a2, theta = face_aniso[:, 0], face_aniso[:, 1], face_aniso[:, 2]
    psi = phi + theta
    cp, sn = np.cos(psi), np.sin(psi)
    h11 = a1 * cp * cp + a2 * sn * sn
    h22 = a1 * sn * sn + a2 * cp * cp
    h12 = (a1 - a2) * cp * sn
    return h11, h12, h22


def conductivity_tensors(frames: FaceFrames, face_aniso: np.ndarray) -> np.ndarray:
    """Per-face 3x3 conductivity H = V D V^T acting in the face plane."""
    a1, a2, theta = face_aniso[:, 0], face_aniso[:, 1], face_aniso[:, 2]
    ct, st = np.cos(theta)[:, None], np.sin(theta)[:, None]
    u1 = ct * frames.v_min + st * frames.v_max
    u2 = -st * frames.v_min + ct * frames.v_max
    return (
        a1[:, None, None] * u1[:, :, None] * u1[:, None, :]
        + a2[:, None, None] * u2[:, :, None] * u2[:, None, :]
    )


def anisotropic_face_weights(
    geom: GeometryCache, phi: np.ndarray, face_aniso: np.ndarray
) -> np.ndarray:
    """Per-face pair weights of the anisotropic stiffness, (F, 3).

    Pair m is the edge opposite corner m. At a1 = a2 = 1 this reduces
    exactly to the cotangent weights cot(angle_m)/2.
    """
    x, y = _face_layout(geom)
    c = geom.face_lengths[:, 2]
    h11, h12, h22 = conductivity_entries(phi, face_aniso)
    T4 = 4.0 * geom.areas
    w0 = c * (x * h11 + y * h12) / T4
    w1 = c * ((c - x) * h11 - y * h12) / T4
    w2 = (-x * (c - x) * h11 + y * (2.0 * x - c) * h12 + y * y * h22) / T4
    return np.stack([w0, w1, w2], axis=1)


def assemble_anisotropic_stiffness(
    mesh: Mesh,
    geom: GeometryCache,
    frames: FaceFrames,
    face_aniso: np.ndarray,
) -> sp.csr_matrix:
    """Stiffness with per-face conductivity aligned to curvature frames."""
    phi = frame_angles(mesh, frames)
    w = anisotropic_face_weights(geom, phi, face_aniso)
    edge_w = np.zeros(mesh.n_edges)
    np.add.at(edge_w, mesh.face_edges.ravel(), w.ravel())
    return _scatter_symmetric(mesh, edge_w)


@dataclass(frozen=True)
class AssembledOperator:
    """Full forward-pass record: operators plus everything the backward
    pass needs (geometry at the effective metric, frame angles, projection
    trace, pre-projection target lengths)."""

    mesh: Mesh
    params: OperatorParams
    mode: str
    ops: OperatorPair
    geom: GeometryCache
    frames: FaceFrames | None
    phi: np.ndarray | None
    base_lengths: np.ndarray      # embedding lengths d0
    target_lengths: np.ndarray    # d0 * exp(edge_log_scale)
    fix_trace: FixMetricTrace
    fix_eps: float


def modified_operator(
    mesh: Mesh,
    params: OperatorParams,
    mode: str = "isotropic",
    frames: FaceFrames | None = None,
    fix_eps: float | None = None,
) -> AssembledOperator:
    """Compose metric reweighting, projection, assembly, and mass weighting.

    ``mode`` is "isotropic" or "anisotropic"; the latter requires curvature
    frames. The default projection margin is 1e-4 times the mean target
    length.
    """
    if mode not in ("isotropic", "anisotropic"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "anisotropic" and frames is None:
        raise ValueError("anisotropic mode requires curvature frames")
    d0 = mesh.edge_lengths()
    target = d0 * np.exp(params.edge_log_scale)
    if fix_eps is None:
        fix_eps = 1e-4 * float(target.mean())
    d_hat, trace = fix_metric(mesh, target, eps=fix_eps)
    geom = geometry(mesh, d_hat)
    if mode == "anisotropic":
        W = assemble_anisotropic_stiffness(mesh, geom, frames, params.face_aniso)
        phi = frame_angles(mesh, frames)
    else:
        W = assemble_stiffness(mesh, geom)
        phi = None
    A = assemble_mass(geom, params.vertex_log_weight)
    return AssembledOperator(
        mesh=mesh,
        params=params,
        mode=mode,
        ops=OperatorPair(W=W, A=A),
        geom=geom,
        frames=frames,
        phi=phi,
        base_lengths=d0,
        target_lengths=target,
        fix_trace=trace,
        fix_eps=fix_eps,
    )


def with_params(asm: AssembledOperator, params: OperatorParams) -> AssembledOperator:
    """Re-run the forward pass with new parameters on the same mesh."""
    return modified_operator(
        asm.mesh, params, mode=asm.mode, frames=asm.frames, fix_eps=asm.fix_eps
    )


def save_matrix_coo(W: sp.spmatrix, path) -> None:
    """Coordinate-triplet text export: one 'row col value' line per entry."""
    coo = W.tocoo()
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")


def save_matrix_dense_csv(W: sp.spmatrix, path) -> None:
    np.savetxt(path, np.asarray(W.todense()), delimiter=",")


__all__ = [
    "OperatorParams",
    "OperatorPair",
    "FixMetricTrace",
    "MetricProjectionError",
    "fix_metric",
    "backprop_fix_metric",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_anisotropic_stiffness",
    "anisotropic_face_weights",
    "conductivity_entries",
    "conductivity_tensors",
    "frame_angles",
    "modified_operator",
    "with_params",
    "AssembledOperator",
    "save_matrix_coo",
    "save_matrix_dense_csv",
]
