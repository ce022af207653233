"""Central finite-difference audit of the derivative stack.

Three ladders, each with its own tolerance: matrix-level (element
derivatives of W and A), eigen-level (eigenpair sensitivities), and
end-to-end (scalar loss gradients through the reverse engine). Finite
differences over the plain forward pass are the authority; the analytic side
must match.
"""

from __future__ import annotations

import time

import numpy as np

from .adjoint import hks_pullback, nelson_forward, reverse_gradient, NelsonWorkspace
from .assembly import OperatorParams, modified_operator, with_params
from .curvature import curvature_frames
from .derivatives import (
    ElementDerivative,
    mass_metric_derivative,
    mass_weight_derivative,
    stiffness_aniso_derivative,
    stiffness_metric_derivative_aniso,
    stiffness_metric_derivative_iso,
    stiffness_rotation_derivative,
)
from .descriptors import hks, log_time_samples
from .eigen import solve_gep
from .geometry import build_flaps
from .meshio import Mesh

TOL_MATRIX = 1e-6
TOL_EIGEN = 1e-4
TOL_LOSS = 1e-3

ALL_FAMILIES = ("edge", "a1", "a2", "theta", "vertex")


def _random_params(mesh: Mesh, rng, mode: str) -> OperatorParams:
    """Mild random reweighting: large enough to break symmetry-born zeros,
    small enough that the metric projection never fires (FD stays smooth)."""
    aniso = np.zeros((mesh.n_faces, 3))
    if mode == "anisotropic":
        aniso[:, 0] = np.exp(0.15 * rng.standard_normal(mesh.n_faces))
        aniso[:, 1] = np.exp(0.15 * rng.standard_normal(mesh.n_faces))
        aniso[:, 2] = 0.2 * rng.standard_normal(mesh.n_faces)
    else:
        aniso[:, :2] = 1.0
    return OperatorParams(
        edge_log_scale=0.03 * rng.standard_normal(mesh.n_edges),
        face_aniso=aniso,
        vertex_log_weight=0.1 * rng.standard_normal(mesh.n_vertices),
    )


def _perturb(params: OperatorParams, family: str, idx: int, h: float):
    edge = params.edge_log_scale.copy()
    aniso = params.face_aniso.copy()
    vertex = params.vertex_log_weight.copy()
    if family == "edge":
        edge[idx] += h
    elif family == "vertex":
        vertex[idx] += h
    else:
        aniso[idx, ("a1", "a2", "theta").index(family)] += h
    return OperatorParams(
        edge_log_scale=edge, face_aniso=aniso, vertex_log_weight=vertex
    )


def _rel_err(fd, an, floor: float) -> float:
    fd = np.asarray(fd, dtype=np.float64)
    an = np.asarray(an, dtype=np.float64)
    scale = max(float(np.abs(fd).max(initial=0.0)),
                float(np.abs(an).max(initial=0.0)), floor)
    return float(np.abs(fd - an).max(initial=0.0)) / scale


def _element_derivative(asm, flaps, family: str, idx: int) -> ElementDerivative:
    """Merged (dW, dA) with respect to the *raw* parameter: edge derivatives
    are chained through d_hat = d0 exp(s)."""
    mesh, geom = asm.mesh, asm.geom
    if family == "edge":
        if asm.mode == "anisotropic":
            dW = stiffness_metric_derivative_aniso(
                mesh, flaps, geom, asm.phi, asm.params.face_aniso, idx
            )
        else:
            dW = stiffness_metric_derivative_iso(mesh, flaps, geom, idx)
        dA = mass_metric_derivative(
            mesh, flaps, geom, idx, asm.params.vertex_log_weight
        )
        t = asm.target_lengths[idx]
        return ElementDerivative(
            family="edge", index=idx,
            dW=dW.dW * t,
            dA_idx=dA.dA_idx, dA_val=dA.dA_val * t, clamped=dA.clamped,
        )
    if family == "vertex":
        return mass_weight_derivative(idx, asm.ops.A)
    if family in ("a1", "a2"):
        return stiffness_aniso_derivative(
            mesh, geom, asm.phi, asm.params.face_aniso, idx, family
        )
    if family == "theta":
        return stiffness_rotation_derivative(
            mesh, geom, asm.phi, asm.params.face_aniso, idx
        )
    raise ValueError(f"unknown family {family!r}")


def _sample_indices(rng, family: str, mesh: Mesh, samples: int) -> np.ndarray:
    count = {
        "edge": mesh.n_edges, "vertex": mesh.n_vertices,
        "a1": mesh.n_faces, "a2": mesh.n_faces, "theta": mesh.n_faces,
    }[family]
    return rng.choice(count, size=min(samples, count), replace=False)


def run_gradcheck(
    mesh: Mesh,
    families=ALL_FAMILIES,
    pairs: int = 16,
    samples: int = 10,
    seed: int = 0,
    mode: str = "anisotropic",
    corrupt: bool = False,
    fd_step: float = 1e-5,
) -> dict:
    """Full three-ladder audit; the report dict is JSON-serializable.

    ``corrupt`` is the negative-control hook: the analytic end-to-end
    gradient is scaled by 1.01, which must trip the loss-level tolerance.
    """
    t_start = time.perf_counter()
    if mode == "isotropic":
        families = tuple(f for f in families if f in ("edge", "vertex"))
    rng = np.random.default_rng(seed)
    params = _random_params(mesh, rng, mode)
    frames = curvature_frames(mesh)[0] if mode == "anisotropic" else None
    asm = modified_operator(mesh, params, mode=mode, frames=frames)
    if asm.fix_trace.altered:
        raise RuntimeError(
            "audit point touched the metric projection; pick smaller scales"
        )
    flaps = build_flaps(mesh)

    k = min(pairs, mesh.n_vertices - 2)
    eigs = solve_gep(asm.ops, k=k, skip=1)
    ws = NelsonWorkspace(asm.ops, eigs)

    errs_matrix: dict[str, float] = {}
    errs_eigen: dict[str, float] = {}
    errs_loss: dict[str, float] = {}
    n = mesh.n_vertices
    live = ~eigs.degenerate

    # End-to-end scalar: random linear functional of the heat signature.
    times = log_time_samples(eigs, 8)
    R = rng.standard_normal((n, len(times)))

    def loss_of(asm_x):
        eig_x = solve_gep(asm_x.ops, k=k, skip=1)
        return float((hks(eig_x, times).values * R).sum())

    glam, gphi = hks_pullback(eigs, times, R)
    bundle = reverse_gradient(asm, eigs, glam, gphi, families=families,
                              workspace=ws)
    bundle_arrays = dict(bundle.items())

    for family in families:
        idxs = _sample_indices(rng, family, mesh, samples)
        m_err = e_err = l_err = 0.0
        for idx in idxs:
            idx = int(idx)
            h = fd_step
            asm_p = with_params(asm, _perturb(params, family, idx, +h))
            asm_m = with_params(asm, _perturb(params, family, idx, -h))
            if asm_p.fix_trace.altered or asm_m.fix_trace.altered:
                continue

            # matrix level
            deriv = _element_derivative(asm, flaps, family, idx)
            fd_W = (asm_p.ops.W - asm_m.ops.W).toarray() / (2 * h)
            an_W = deriv.dW.toarray() if deriv.dW is not None else 0.0 * fd_W
            fd_A = (asm_p.ops.A - asm_m.ops.A) / (2 * h)
            an_A = deriv.dA_dense(n)
            wscale = max(float(np.abs(asm.ops.W.data).max()), 1.0)
            m_err = max(m_err, _rel_err(fd_W, an_W, wscale))
            m_err = max(m_err, _rel_err(fd_A, an_A, float(asm.ops.A.max())))

            # eigen level
            eig_p = solve_gep(asm_p.ops, k=k, skip=1)
            eig_m = solve_gep(asm_m.ops, k=k, skip=1)
            sens = nelson_forward(asm.ops, eigs, deriv, workspace=ws)
            fd_lam = (eig_p.eigenvalues - eig_m.eigenvalues) / (2 * h)
            lam_scale = max(float(np.abs(eigs.eigenvalues).max()), 1.0)
            e_err = max(
                e_err, _rel_err(fd_lam[live], sens.dlam[live], lam_scale)
            )
            fd_phi = (eig_p.eigenvectors - eig_m.eigenvectors) / (2 * h)
            phi_scale = max(float(np.abs(fd_phi[:, live]).max(initial=0.0)), 1.0)
            e_err = max(
                e_err,
                _rel_err(fd_phi[:, live], sens.dphi[:, live], phi_scale),
            )

            # loss level
            fd_l = (loss_of(asm_p) - loss_of(asm_m)) / (2 * h)
            an_l = float(bundle_arrays[family][idx])
            if corrupt:
                an_l *= 1.01
            gscale = max(float(np.abs(bundle_arrays[family]).max()), 1e-6)
            l_err = max(l_err, abs(fd_l - an_l) / max(abs(fd_l), abs(an_l), gscale))

        errs_matrix[family] = m_err
        errs_eigen[family] = e_err
        errs_loss[family] = l_err

    max_m = max(errs_matrix.values())
    max_e = max(errs_eigen.values())
    max_l = max(errs_loss.values())
    passed = max_m <= TOL_MATRIX and max_e <= TOL_EIGEN and max_l <= TOL_LOSS
    return {
        "passed": bool(passed),
        "families": list(families),
        "samples_per_family": samples,
        "pairs": k,
        "masked_pairs": int(eigs.degenerate.sum()),
        "per_family": {
            f: {
                "matrix": errs_matrix[f],
                "eigen": errs_eigen[f],
                "loss": errs_loss[f],
            }
            for f in families
        },
        "max_rel_err": {"matrix": max_m, "eigen": max_e, "loss": max_l},
        "tolerances": {
            "matrix": TOL_MATRIX, "eigen": TOL_EIGEN, "loss": TOL_LOSS
        },
        "wall_time_s": round(time.perf_counter() - t_start, 3),
        "corrupted": bool(corrupt),
    }
