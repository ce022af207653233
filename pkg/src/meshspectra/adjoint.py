"""Eigen-derivative machinery: Nelson's method (forward), descriptor
pullback, and the vectorized reverse-mode gradient engine.

All derivative identities are taken in the convention K phi = lambda A phi
with K = -W positive semidefinite and phi^T A phi = 1:

    dlam   = phi^T (dK - lam dA) phi
    (K - lam A) mu = -(dK - lam dA - dlam A) phi        (pinned at the
                     largest-magnitude component of phi, Nelson's pivot)
    dphi   = mu + c phi,   c = -phi^T A mu - 1/2 phi^T dA phi

The reverse engine needs exactly one pinned adjoint solve per eigenpair and
then contracts the resulting bilinear forms against every element
derivative's sparse support, vectorized over faces/edges/vertices and over
eigenpairs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssembledOperator, OperatorPair, backprop_fix_metric
from .derivatives import (
    ElementDerivative,
    aniso_kernels,
    iso_weight_jacobian,
    mass_metric_derivative,
    mass_weight_derivative,
    stiffness_aniso_derivative,
    stiffness_metric_derivative_aniso,
    stiffness_metric_derivative_iso,
    stiffness_rotation_derivative,
    voronoi_jacobian,
)
from .eigen import EigenSystem
from .geometry import EdgeFlaps, build_flaps
from .meshio import Mesh

FAMILIES = ("edge", "a1", "a2", "theta", "vertex")


class DegenerateEigenpairWarning(UserWarning):
    """Cotangents on near-degenerate eigenpairs were dropped."""


class PinnedSolveError(RuntimeError):
    """The pinned Nelson system could not be factorized."""


class NelsonWorkspace:
    """Per-eigenpair pinned factorizations of (K - lam A), built lazily.

    The pivot row and column are replaced by the unit vector, which removes
    the simple-eigenpair null space; the factorization is reused across all
    parameters (forward mode) and for the single adjoint solve per pair
    (reverse mode). The pinned matrix is symmetric, so forward and adjoint
    solves share it.
    """

    def __init__(self, ops: OperatorPair, eigs: EigenSystem):
        self.ops = ops
        self.eigs = eigs
        self.K = (-ops.W).tocsr()
        self._pivots = np.abs(eigs.eigenvectors).argmax(axis=0)
        self._factors: dict[int, object] = {}

    def pivot(self, k: int) -> int:
        return int(self._pivots[k])

    def _factor(self, k: int):
        if k not in self._factors:
            lam = self.eigs.eigenvalues[k]
            m = self.pivot(k)
            P = (self.K - lam * sp.diags(self.ops.A)).tocoo()
            keep = (P.row != m) & (P.col != m)
            rows = np.append(P.row[keep], m)
            cols = np.append(P.col[keep], m)
            vals = np.append(P.data[keep], 1.0)
            Pcsc = sp.csc_matrix(
                (vals, (rows, cols)), shape=P.shape
            )
            try:
                self._factors[k] = (spla.splu(Pcsc), Pcsc)
            except RuntimeError as exc:
                raise PinnedSolveError(
                    f"pinned system for pair {k} is singular: {exc}"
                ) from exc
        return self._factors[k]

    def solve(self, k: int, rhs: np.ndarray) -> np.ndarray:
        """Solve the pinned system with one step of iterative refinement."""
        lu, P = self._factor(k)
        b = rhs.copy()
        b[self.pivot(k)] = 0.0
        x = lu.solve(b)
        x += lu.solve(b - P @ x)
        x[self.pivot(k)] = 0.0
        return x


@dataclass(frozen=True)
class EigenDerivatives:
    """Forward-mode sensitivities of the retained eigenpairs.

    ``masked`` flags near-degenerate pairs whose derivatives are undefined
    and returned as zero.
    """

    dlam: np.ndarray   # (k,)
    dphi: np.ndarray   # (n, k)
    masked: np.ndarray  # (k,) bool


def nelson_forward(
    ops: OperatorPair,
    eigs: EigenSystem,
    deriv: ElementDerivative,
    variant: str = "full",
    workspace: NelsonWorkspace | None = None,
) -> EigenDerivatives:
    """Eigenvalue/eigenvector derivatives for one element derivative.

    ``variant`` selects which operator part participates: "full",
    "stiffness_only" (dA treated as zero), or "mass_only" (dW zero).
    """
    if variant not in ("full", "stiffness_only", "mass_only"):
        raise ValueError(f"unknown variant {variant!r}")
    ws = workspace or NelsonWorkspace(ops, eigs)
    n, k = eigs.n, eigs.k
    use_W = variant != "mass_only" and deriv.dW is not None
    use_A = variant != "stiffness_only" and deriv.dA_idx is not None

    dK = (-deriv.dW).tocsr() if use_W else None
    dA = deriv.dA_dense(n) if use_A else None

    dlam = np.zeros(k)
    dphi = np.zeros((n, k))
    masked = eigs.degenerate.copy()
    A = ops.A
    for i in range(k):
        lam = eigs.eigenvalues[i]
        phi = eigs.eigenvectors[:, i]
        dKphi = dK @ phi if dK is not None else np.zeros(n)
        dAphi = dA * phi if dA is not None else np.zeros(n)
        dl = phi @ dKphi - lam * (phi @ dAphi)
        # Eigenvalue sensitivities stay valid (as a group) on degenerate
        # pairs; only the eigenvector channel is undefined and masked.
        dlam[i] = dl
        if masked[i]:
            continue
        rhs = -(dKphi - lam * dAphi - dl * (A * phi))
        mu = ws.solve(i, rhs)
        c = -(phi @ (A * mu)) - 0.5 * (phi @ dAphi)
        dphi[:, i] = mu + c * phi
    return EigenDerivatives(dlam=dlam, dphi=dphi, masked=masked)


def hks_pullback(
    eigs: EigenSystem, times: np.ndarray, cotangent: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Pull dL/d(heat kernel signature) back to (dL/dlam, dL/dphi).

    ``cotangent`` has shape (n vertices, n times). Per pair k and time t the
    signature contributes -t exp(-t lam_k) phi_k^2 to the eigenvalue channel
    and 2 exp(-t lam_k) phi_k to the eigenvector channel.
    """
    t = np.asarray(times, dtype=np.float64)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != (eigs.n, len(t)):
        raise ValueError(f"cotangent must have shape ({eigs.n}, {len(t)})")
    E = np.exp(-np.outer(eigs.eigenvalues, t))       # (k, T)
    phi2 = eigs.eigenvectors**2                      # (n, k)
    glam = -((phi2.T @ cot) * E * t).sum(axis=1)     # (k,)
    gphi = 2.0 * eigs.eigenvectors * (cot @ E.T)     # (n, k)
    return glam, gphi


@dataclass
class GradientBundle:
    """Loss gradients aligned with OperatorParams."""

    edge: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    theta: np.ndarray
    vertex: np.ndarray

    @classmethod
    def zeros(cls, mesh: Mesh) -> "GradientBundle":
        return cls(
            edge=np.zeros(mesh.n_edges),
            a1=np.zeros(mesh.n_faces),
            a2=np.zeros(mesh.n_faces),
            theta=np.zeros(mesh.n_faces),
            vertex=np.zeros(mesh.n_vertices),
        )

    def items(self):
        return (
            ("edge", self.edge), ("a1", self.a1), ("a2", self.a2),
            ("theta", self.theta), ("vertex", self.vertex),
        )


def clip_gradients(bundle: GradientBundle, tau: float = 1.0) -> GradientBundle:
    """Per-family global-norm clipping to threshold tau."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    out = {}
    for name, g in bundle.items():
        norm = float(np.linalg.norm(g))
        out[name] = g * (tau / norm) if norm > tau else g.copy()
    return GradientBundle(**out)


def _drop_masked_cotangents(eigs, glam, gphi):
    """Zero eigenvector cotangents on near-degenerate pairs.

    Eigenvalue cotangents are kept: their first-order sensitivities remain
    valid as a group even when the individual eigenvectors are not
    identifiable.
    """
    glam = np.asarray(glam, dtype=np.float64).copy()
    gphi = np.asarray(gphi, dtype=np.float64).copy()
    if eigs.degenerate.any():
        dropped = eigs.degenerate & (gphi != 0).any(axis=0)
        if dropped.any():
            warnings.warn(
                f"dropping eigenvector cotangents on {int(dropped.sum())} "
                "near-degenerate eigenpairs",
                DegenerateEigenpairWarning,
                stacklevel=3,
            )
        gphi[:, eigs.degenerate] = 0.0
    return glam, gphi


def chain_edge_gradient(
    asm: AssembledOperator, g_dhat: np.ndarray, gate: str = "linear"
) -> np.ndarray:
    """Chain dL/d(effective length) to dL/d(edge log scale).

    ``gate`` picks the backward rule at the metric projection: "linear"
    replays the last sweep's per-face linear updates transposed,
    "straight_through" treats the projection as identity.
    """
    if gate not in ("linear", "straight_through"):
        raise ValueError(f"unknown gate {gate!r}")
    g = np.asarray(g_dhat, dtype=np.float64)
    if gate == "linear" and asm.fix_trace.altered:
        g = backprop_fix_metric(asm.mesh, asm.fix_trace, g)
    return g * asm.target_lengths


def _pair_vectors(asm, eigs, glam, gphi, workspace):
    """One adjoint solve per retained non-degenerate pair.

    Returns (beta, s, Wmat) where Wmat columns are the adjoint solutions;
    masked pairs contribute zero columns.
    """
    ws = workspace or NelsonWorkspace(asm.ops, eigs)
    A = asm.ops.A
    n, k = eigs.n, eigs.k
    Wmat = np.zeros((n, k))
    beta = np.zeros(k)
    s = np.zeros(k)
    for i in range(k):
        if eigs.degenerate[i]:
            # Eigenvector cotangents are already zeroed here; the
            # eigenvalue channel needs no pinned solve.
            beta[i] = glam[i]
            continue
        phi = eigs.eigenvectors[:, i]
        s[i] = gphi[:, i] @ phi
        a_vec = gphi[:, i] - s[i] * (A * phi)
        w = ws.solve(i, a_vec)
        Wmat[:, i] = w
        beta[i] = glam[i] + w @ (A * phi)
    return beta, s, Wmat


def reverse_gradient(
    asm: AssembledOperator,
    eigs: EigenSystem,
    glam: np.ndarray,
    gphi: np.ndarray,
    families: tuple = FAMILIES,
    workspace: NelsonWorkspace | None = None,
    gate: str = "linear",
) -> GradientBundle:
    """Backpropagate eigen-level cotangents to every requested parameter
    family in one pass.

    Equal (to solver precision) to summing nelson_forward over all
    parameters, but with one pinned solve per eigenpair instead of one per
    parameter.
    """
    unknown = set(families) - set(FAMILIES)
    if unknown:
        raise ValueError(f"unknown families {sorted(unknown)}")
    mesh = asm.mesh
    geom = asm.geom
    glam, gphi = _drop_masked_cotangents(eigs, glam, gphi)
    beta, s, Wmat = _pair_vectors(asm, eigs, glam, gphi, workspace)

    Phi = eigs.eigenvectors
    lam = eigs.eigenvalues
    A = asm.ops.A

    # Contraction bilinear forms, evaluated only where sparse derivatives
    # have support: X (against dK) on edges + diagonal, Y (against dA) on
    # the diagonal.
    i_idx, j_idx = mesh.edges[:, 0], mesh.edges[:, 1]
    Pi, Pj = Phi[i_idx], Phi[j_idx]
    Wi, Wj = Wmat[i_idx], Wmat[j_idx]
    X_edge = (beta * Pi * Pj - 0.5 * (Wi * Pj + Pi * Wj)).sum(axis=1)
    X_diag = (beta * Phi**2 - Wmat * Phi).sum(axis=1)
    Y_diag = ((-lam * beta - 0.5 * s) * Phi**2 + lam * (Wmat * Phi)).sum(axis=1)

    # A face-pair weight increment dw enters K as -dw off-diagonal and +dw
    # on both diagonals, so it is contracted with:
    C_edge = X_diag[i_idx] + X_diag[j_idx] - 2.0 * X_edge

    bundle = GradientBundle.zeros(mesh)
    fe = mesh.face_edges
    C_face = C_edge[fe]                               # (F, 3)

    need_aniso = asm.mode == "anisotropic" and (
        {"a1", "a2", "theta"} & set(families) or "edge" in families
    )
    ker = None
    if need_aniso:
        ker = aniso_kernels(
            geom.face_lengths, geom.areas, asm.phi, asm.params.face_aniso
        )

    if "edge" in families:
        if asm.mode == "anisotropic":
            Jw = ker.d_length
        else:
            Jw = iso_weight_jacobian(geom.face_lengths, geom.areas)
        # Stiffness part: sum over pairs t of dw_t/dl_p * C_t, scattered to
        # the edge sitting at face pair p.
        per_fp = np.einsum("ftp,ft->fp", Jw, C_face)
        g_dhat = np.zeros(mesh.n_edges)
        np.add.at(g_dhat, fe.ravel(), per_fp.ravel())

        # Mass part through the Voronoi areas (clamped vertices gated off).
        Jv = voronoi_jacobian(geom.face_lengths, geom.areas)
        YA = Y_diag * np.exp(asm.params.vertex_log_weight)
        YA = np.where(geom.voronoi_clamped, 0.0, YA)
        per_fp_mass = np.einsum("ftp,ft->fp", Jv, YA[mesh.faces])
        np.add.at(g_dhat, fe.ravel(), per_fp_mass.ravel())

        bundle.edge[:] = chain_edge_gradient(asm, g_dhat, gate=gate)

    if asm.mode == "anisotropic":
        if "a1" in families:
            bundle.a1[:] = (ker.d_a1 * C_face).sum(axis=1)
        if "a2" in families:
            bundle.a2[:] = (ker.d_a2 * C_face).sum(axis=1)
        if "theta" in families:
            bundle.theta[:] = (ker.d_theta * C_face).sum(axis=1)

    if "vertex" in families:
        bundle.vertex[:] = A * Y_diag

    return bundle


def forward_gradient(
    asm: AssembledOperator,
    eigs: EigenSystem,
    glam: np.ndarray,
    gphi: np.ndarray,
    families: tuple = FAMILIES,
    workspace: NelsonWorkspace | None = None,
    gate: str = "linear",
    flaps: EdgeFlaps | None = None,
) -> GradientBundle:
    """Reference composition: loop nelson_forward over every parameter.

    Slow (one pinned solve system per parameter-pair combination) but
    structurally independent of the reverse engine's contraction algebra;
    used as its oracle.
    """
    mesh = asm.mesh
    geom = asm.geom
    glam, gphi = _drop_masked_cotangents(eigs, glam, gphi)
    ws = workspace or NelsonWorkspace(asm.ops, eigs)
    flaps = flaps or build_flaps(mesh)
    bundle = GradientBundle.zeros(mesh)

    def contract(deriv):
        ed = nelson_forward(asm.ops, eigs, deriv, workspace=ws)
        return float(glam @ ed.dlam + (gphi * ed.dphi).sum())

    if "edge" in families:
        g_dhat = np.zeros(mesh.n_edges)
        for e in range(mesh.n_edges):
            if asm.mode == "anisotropic":
                dW = stiffness_metric_derivative_aniso(
                    mesh, flaps, geom, asm.phi, asm.params.face_aniso, e
                )
            else:
                dW = stiffness_metric_derivative_iso(mesh, flaps, geom, e)
            dA = mass_metric_derivative(
                mesh, flaps, geom, e, asm.params.vertex_log_weight
            )
            merged = ElementDerivative(
                family="edge", index=e, dW=dW.dW,
                dA_idx=dA.dA_idx, dA_val=dA.dA_val, clamped=dA.clamped,
            )
            g_dhat[e] = contract(merged)
        bundle.edge[:] = chain_edge_gradient(asm, g_dhat, gate=gate)

    if asm.mode == "anisotropic":
        for f in range(mesh.n_faces):
            if "a1" in families:
                bundle.a1[f] = contract(
                    stiffness_aniso_derivative(
                        mesh, geom, asm.phi, asm.params.face_aniso, f, "a1"
                    )
                )
            if "a2" in families:
                bundle.a2[f] = contract(
                    stiffness_aniso_derivative(
                        mesh, geom, asm.phi, asm.params.face_aniso, f, "a2"
                    )
                )
            if "theta" in families:
                bundle.theta[f] = contract(
                    stiffness_rotation_derivative(
                        mesh, geom, asm.phi, asm.params.face_aniso, f
                    )
                )

    if "vertex" in families:
        for v in range(mesh.n_vertices):
            bundle.vertex[v] = contract(mass_weight_derivative(v, asm.ops.A))

    return bundle
