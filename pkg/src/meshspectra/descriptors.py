"""Spectral descriptors: heat kernel signature, global point signature."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .eigen import EigenSystem

#: Numerically-zero eigenvalue threshold relative to the largest retained.
ZERO_EIG_REL = 1e-8


@dataclass(frozen=True)
class Descriptor:
    """Per-vertex x per-channel descriptor matrix.

    ``meta`` carries the channel semantics: HKS time values or GPS
    component indices.
    """

    values: np.ndarray
    kind: str
    meta: np.ndarray


def hks(eigs: EigenSystem, times: np.ndarray) -> Descriptor:
    """Heat kernel diagonal h_t(i) = sum_k exp(-t lam_k) phi_k(i)^2."""
    t = np.asarray(times, dtype=np.float64)
    if t.ndim != 1 or len(t) == 0 or (t <= 0).any():
        raise ValueError("times must be a nonempty 1-d array of positive values")
    if (np.diff(t) <= 0).any():
        raise ValueError("times must be strictly ascending")
    if eigs.k == 0:
        raise ValueError("empty retained spectrum")
    decay = np.exp(-np.outer(eigs.eigenvalues, t))     # (k, T)
    vals = (eigs.eigenvectors**2) @ decay              # (n, T)
    return Descriptor(values=vals, kind="hks", meta=t)


def gps(eigs: EigenSystem, n_components: int) -> Descriptor:
    """Global point signature phi_m(i) / sqrt(lam_m) over nonzero pairs."""
    lam = eigs.eigenvalues
    scale = max(float(lam.max()), np.finfo(float).tiny)
    nonzero = np.flatnonzero(lam > ZERO_EIG_REL * scale)
    if n_components > len(nonzero):
        raise ValueError(
            f"requested {n_components} components but only {len(nonzero)} "
            "nonzero eigenpairs are retained"
        )
    sel = nonzero[:n_components]
    vals = eigs.eigenvectors[:, sel] / np.sqrt(lam[sel])
    return Descriptor(values=vals, kind="gps", meta=sel + eigs.skip)


def log_time_samples(eigs: EigenSystem, m: int = 16) -> np.ndarray:
    """m log-uniform times spanning [4 ln10 / lam_max, 4 ln10 / lam_min+]."""
    lam = eigs.eigenvalues
    scale = max(float(lam.max()), np.finfo(float).tiny)
    nonzero = lam[lam > ZERO_EIG_REL * scale]
    if len(nonzero) < 2:
        raise ValueError("need at least 2 retained nonzero eigenvalues")
    lam_min, lam_max = float(nonzero.min()), float(nonzero.max())
    if lam_max <= lam_min * (1 + 1e-12):
        raise ValueError("degenerate spectrum: no usable time range")
    c = 4.0 * np.log(10.0)
    return np.geomspace(c / lam_max, c / lam_min, m)


def descriptor_csv(desc: Descriptor, path, meta_path=None) -> None:
    """CSV export (vertex rows, channel columns) with a JSON sidecar."""
    np.savetxt(path, desc.values, delimiter=",")
    if meta_path is not None:
        with open(meta_path, "w") as fh:
            json.dump(
                {"kind": desc.kind, "channels": np.asarray(desc.meta).tolist()},
                fh,
                indent=2,
            )
