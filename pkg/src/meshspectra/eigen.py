"""Low-end generalized eigensolver for the operator pair (W, A).

Internally the assembled stiffness is negated so the operator is positive
semidefinite and all reported eigenvalues are nonnegative. Small problems go
through a dense solve; larger ones use shift-invert Lanczos with a small
negative shift to sidestep the null-space singularity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import OperatorPair

#: Problems at or below this size use the dense path.
DENSE_CUTOFF = 256

#: Relative eigenvalue gap below which a pair is flagged near-degenerate.
DEGENERACY_REL_GAP = 1e-6

RESIDUAL_ACCEPT = 1e-8


class EigenSolveError(RuntimeError):
    """Factorization failure or non-convergence in the eigensolver."""


@dataclass(frozen=True)
class EigenSystem:
    """Retained eigenpairs of -W phi = lambda A phi, ascending and A-orthonormal.

    The first ``skip`` computed pairs are dropped from the retained arrays
    but kept in ``skipped_eigenvalues`` for reference. ``degenerate`` flags
    pairs whose relative gap to a neighbor falls below 1e-6; sensitivity
    code masks those out. The deterministic sign rule makes the
    largest-magnitude entry of every eigenvector positive.
    """

    eigenvalues: np.ndarray       # (k,)
    eigenvectors: np.ndarray      # (n, k)
    skip: int
    skipped_eigenvalues: np.ndarray
    residuals: np.ndarray         # (k,)
    degenerate: np.ndarray        # (k,) bool

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    @property
    def n(self) -> int:
        return len(self.eigenvectors)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry is positive (ties: lowest
    index, which argmax already gives)."""
    idx = np.abs(vecs).argmax(axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _refine(K, A, lam, vec):
    """Polish Lanczos output past ARPACK's ~1e-8 residual floor.

    Pairs whose residual exceeds half the acceptance threshold get one
    shifted inverse-iteration step (the nearly singular solve is exactly
    what makes the step contract), then a Rayleigh-Ritz pass on the whole
    basis restores B-orthogonality and re-extracts the eigenvalues.
    """
    R = K @ vec - (A[:, None] * vec) * lam
    bad = np.abs(R).max(axis=0) > 0.5 * RESIDUAL_ACCEPT * np.maximum(1.0, lam)
    if not bad.any():
        return lam, vec
    vec = vec.copy()
    M = sp.diags(A).tocsc()
    scale = float(np.abs(lam).max())
    for i in np.flatnonzero(bad):
        shift = lam[i] + 1e-12 * scale  # keep the solve off exact singularity
        try:
            lu = spla.splu((K - shift * M).tocsc())
        except RuntimeError:
            continue
        y = lu.solve(A * vec[:, i])
        norm = np.sqrt(y @ (A * y))
        if np.isfinite(norm) and norm > 0:
            vec[:, i] = y / norm
    MA = vec.T @ (A[:, None] * vec)
    MK = vec.T @ (K @ vec)
    lam2, Q = scipy.linalg.eigh((MK + MK.T) / 2, (MA + MA.T) / 2)
    return lam2, vec @ Q


def solve_gep(ops: OperatorPair, k: int, skip: int = 0) -> EigenSystem:
    """Solve for the k + skip smallest eigenpairs and retain the last k.

    Eigenvectors are A-orthonormal and deterministically signed; repeated
    calls on identical inputs return identical output.
    """
    n = ops.n
    if k < 1:
        raise ValueError("k must be >= 1")
    if k + skip > n:
        raise ValueError(f"k + skip = {k + skip} exceeds vertex count {n}")
    if (ops.A <= 0).any():
        raise EigenSolveError(
            f"mass entry {int(np.argmin(ops.A))} is not strictly positive"
        )

    total = k + skip
    # One extra pair (when available) tightens the boundary degeneracy check.
    want = min(total + 1, n)
    K = (-ops.W).tocsc()

    if n <= DENSE_CUTOFF or want >= n - 1:
        lam_all, vec_all = scipy.linalg.eigh(
            K.toarray(), np.diag(ops.A), subset_by_index=[0, want - 1]
        )
    else:
        sigma = -1e-8 * float(ops.A.sum()) / n
        M = sp.diags(ops.A).tocsc()
        v0 = np.random.default_rng(0).standard_normal(n)
        try:
            lam_all, vec_all = spla.eigsh(
                K, k=want, M=M, sigma=sigma, which="LM", v0=v0,
                maxiter=300 * want, tol=0,
            )
        except spla.ArpackNoConvergence as exc:
            raise EigenSolveError(
                f"Lanczos did not converge (shift {sigma:.3e}): {exc}"
            ) from exc
        except RuntimeError as exc:
            raise EigenSolveError(
                f"shift-invert factorization failed (shift {sigma:.3e}): {exc}"
            ) from exc
        order = np.argsort(lam_all)
        lam_all, vec_all = lam_all[order], vec_all[:, order]
        lam_all, vec_all = _refine(K, ops.A, lam_all, vec_all)

    lam_all = np.maximum(lam_all, 0.0)  # round-off can leave the null space at -1e-16
    vec_all = _fix_signs(vec_all)

    # Exact A-orthonormalization against round-off.
    norms = np.sqrt(np.einsum("ik,i,ik->k", vec_all, ops.A, vec_all))
    vec_all = vec_all / norms

    scale = max(float(lam_all.max()), np.finfo(float).tiny)
    gaps = np.abs(np.diff(lam_all)) / scale
    degen_all = np.zeros(len(lam_all), dtype=bool)
    degen_all[:-1] |= gaps < DEGENERACY_REL_GAP
    degen_all[1:] |= gaps < DEGENERACY_REL_GAP

    lam = lam_all[skip:total]
    vec = np.ascontiguousarray(vec_all[:, skip:total])
    degen = degen_all[skip:total]

    R = K @ vec - (ops.A[:, None] * vec) * lam
    residuals = np.abs(R).max(axis=0)
    bad = residuals > RESIDUAL_ACCEPT * np.maximum(1.0, lam)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise EigenSolveError(
            f"eigenresidual {residuals[i]:.3e} for pair {i} exceeds tolerance"
        )

    return EigenSystem(
        eigenvalues=lam,
        eigenvectors=vec,
        skip=skip,
        skipped_eigenvalues=lam_all[:skip].copy(),
        residuals=residuals,
        degenerate=degen,
    )


def spectrum_csv(eigs: EigenSystem, path) -> None:
    """Export the retained spectrum as 'index,eigenvalue' CSV."""
    with open(path, "w") as fh:
        fh.write("index,eigenvalue\n")
        for i, lam in enumerate(eigs.eigenvalues):
            fh.write(f"{i + eigs.skip},{lam:.17g}\n")


def eigenvectors_csv(eigs: EigenSystem, path) -> None:
    np.savetxt(path, eigs.eigenvectors, delimiter=",")
