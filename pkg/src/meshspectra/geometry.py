"""Intrinsic geometry from edge lengths: angles, areas, Voronoi cells, flaps.

All angle and area computation here is driven purely by edge lengths (law of
cosines, Heron), never by the embedding. Reweighted metrics therefore change
the operator without moving vertices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .meshio import Mesh, MeshError

#: Relative scale of the Voronoi-area clamp: A_ii is clamped below at
#: EPS_AREA_REL * (mean edge length)^2.
EPS_AREA_REL = 1e-8


class GeometryError(ValueError):
    """Raised for invalid intrinsic geometry (triangle-inequality violation)."""


@dataclass(frozen=True)
class EdgeFlaps:
    """Per-edge flap connectivity: opposite corners and local pair slots.

    ``opposite[e, s]`` is the vertex opposite edge ``e`` in its slot-``s``
    incident face (-1 when absent); ``local_pair[e, s]`` is the corner index
    of that vertex within the face, so the face's pair ``local_pair[e, s]``
    is edge ``e`` itself.
    """

    mesh: Mesh
    opposite: np.ndarray
    local_pair: np.ndarray

    def flap(self, e: int, geom: "GeometryCache | None" = None) -> "EdgeFlap":
        """Assemble the record view of one edge flap.

        Angle and area fields stay ``None`` until a geometry cache is given.
        """
        mesh = self.mesh
        i, j = (int(x) for x in mesh.edges[e])
        f1, f2 = (int(x) for x in mesh.edge_faces[e])
        k1 = int(self.opposite[e, 0])
        k2 = int(self.opposite[e, 1]) if f2 >= 0 else -1
        rec = EdgeFlap(edge=e, i=i, j=j, k1=k1, k2=k2, face1=f1, face2=f2)
        if geom is not None:
            rec._fill(self, geom)
        return rec


@dataclass
class EdgeFlap:
    """One edge flap: endpoints, opposite corners, and (optionally) angles.

    ``alpha`` are the angles at the opposite corners, ``gamma``/``delta`` the
    remaining corner angles at ``i``/``j``, ``area`` the triangle areas.
    Boundary flaps populate only the triangle-1 entries.
    """

    edge: int
    i: int
    j: int
    k1: int
    k2: int
    face1: int
    face2: int
    alpha1: float | None = None
    alpha2: float | None = None
    gamma1: float | None = None
    delta1: float | None = None
    gamma2: float | None = None
    delta2: float | None = None
    area1: float | None = None
    area2: float | None = None

    @property
    def interior(self) -> bool:
        return self.face2 >= 0

    def _fill(self, flaps: EdgeFlaps, geom: "GeometryCache"):
        mesh = flaps.mesh
        for slot in (0, 1):
            f = (self.face1, self.face2)[slot]
            if f < 0:
                continue
            corners = mesh.faces[f]
            ang = geom.angles[f]
            at = {int(corners[c]): float(ang[c]) for c in range(3)}
            if slot == 0:
                self.alpha1 = at[self.k1]
                self.gamma1, self.delta1 = at[self.i], at[self.j]
                self.area1 = float(geom.areas[f])
            else:
                self.alpha2 = at[self.k2]
                self.gamma2, self.delta2 = at[self.i], at[self.j]
                self.area2 = float(geom.areas[f])


def build_flaps(mesh: Mesh) -> EdgeFlaps:
    """Index the edge flaps of a mesh (opposite vertices per edge)."""
    E = mesh.n_edges
    opposite = np.full((E, 2), -1, dtype=np.int64)
    local_pair = np.full((E, 2), -1, dtype=np.int64)
    for slot in (0, 1):
        fs = mesh.edge_faces[:, slot]
        ok = fs >= 0
        fe = mesh.face_edges[fs[ok]]           # (k, 3)
        m = np.argmax(fe == np.flatnonzero(ok)[:, None], axis=1)
        local_pair[ok, slot] = m
        opposite[ok, slot] = mesh.faces[fs[ok], m]
    return EdgeFlaps(mesh=mesh, opposite=opposite, local_pair=local_pair)


@dataclass(frozen=True)
class GeometryCache:
    """Intrinsic per-face and per-vertex geometry derived from edge lengths.

    Per-face arrays are ordered by the face's corner index ``m``; the length
    ``face_lengths[f, m]`` belongs to the edge opposite corner ``m``.
    ``voronoi`` is clamped below at ``eps_area``; ``voronoi_clamped`` marks
    the vertices where the clamp engaged (their metric gradients are zeroed).
    """

    edge_lengths: np.ndarray      # (E,)
    face_lengths: np.ndarray      # (F, 3)
    areas: np.ndarray             # (F,)
    angles: np.ndarray            # (F, 3)
    cot: np.ndarray               # (F, 3) cotangent of the corner angle
    corner_voronoi: np.ndarray    # (F, 3) per-corner Voronoi contribution
    voronoi_raw: np.ndarray       # (n,) unclamped vertex Voronoi area
    voronoi: np.ndarray           # (n,) clamped
    voronoi_clamped: np.ndarray   # (n,) bool
    mean_edge_length: float
    eps_area: float


def geometry(mesh: Mesh, edge_metric: np.ndarray | None = None) -> GeometryCache:
    """Compute intrinsic geometry, optionally under a reweighted edge metric.

    ``edge_metric`` replaces the embedding edge lengths; it must satisfy the
    triangle inequality on every face (run ``fix_metric`` first otherwise).
    """
    if edge_metric is None:
        d = mesh.edge_lengths()
    else:
        d = np.asarray(edge_metric, dtype=np.float64)
        if d.shape != (mesh.n_edges,):
            raise ValueError(f"edge_metric must have shape ({mesh.n_edges},)")
        if (d <= 0).any():
            raise GeometryError(
                f"non-positive metric length on edge {int(np.argmin(d))}"
            )

    L = d[mesh.face_edges]                     # (F, 3)
    L2 = L * L
    s = L2.sum(axis=1)
    q = s[:, None] - 2.0 * L2                  # q_m = sum_{p != m} l_p^2 - l_m^2

    margin = L.sum(axis=1)[:, None] - 2.0 * L  # l_p + l_r - l_m per corner m
    if (margin <= 0).any():
        f = int(np.flatnonzero((margin <= 0).any(axis=1))[0])
        raise GeometryError(f"triangle inequality violated on face {f}")

    heron16 = (
        2.0 * (L2[:, 0] * L2[:, 1] + L2[:, 1] * L2[:, 2] + L2[:, 2] * L2[:, 0])
        - (L2 * L2).sum(axis=1)
    )
    if (heron16 <= 0).any():
        f = int(np.argmin(heron16))
        raise GeometryError(f"negative Heron discriminant on face {f}")
    T = 0.25 * np.sqrt(heron16)

    # cos of corner m via law of cosines; product of the two adjacent lengths.
    adj = L[:, [1, 0, 0]] * L[:, [2, 2, 1]]
    cosang = np.clip(q / (2.0 * adj), -1.0, 1.0)
    angles = np.arccos(cosang)
    cot = q / (4.0 * T[:, None])

    # Voronoi split of each face: corner m collects 1/8 cot_p l_p^2 over the
    # two edges incident to it (pairs p != m).
    wl2 = cot * L2 / 8.0
    corner_voronoi = wl2.sum(axis=1)[:, None] - wl2

    n = mesh.n_vertices
    voronoi_raw = np.zeros(n)
    np.add.at(voronoi_raw, mesh.faces.ravel(), corner_voronoi.ravel())

    mean_len = float(d.mean()) if len(d) else 0.0
    eps_area = EPS_AREA_REL * mean_len * mean_len
    clamped = voronoi_raw < eps_area
    voronoi = np.where(clamped, eps_area, voronoi_raw)

    return GeometryCache(
        edge_lengths=d,
        face_lengths=L,
        areas=T,
        angles=angles,
        cot=cot,
        corner_voronoi=corner_voronoi,
        voronoi_raw=voronoi_raw,
        voronoi=voronoi,
        voronoi_clamped=clamped,
        mean_edge_length=mean_len,
        eps_area=eps_area,
    )


def surface_area(geom: GeometryCache) -> float:
    return float(geom.areas.sum())


def obtuse_fraction(geom: GeometryCache) -> float:
    """Fraction of faces with an obtuse corner (negative cotangent)."""
    if len(geom.cot) == 0:
        return 0.0
    return float((geom.cot < 0).any(axis=1).mean())
