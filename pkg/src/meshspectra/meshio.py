"""Triangle mesh container, validation, and OFF/OBJ/PLY file readers."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Raised when a mesh file fails to parse or violates a mesh invariant."""


@dataclass(frozen=True)
class Mesh:
    """An edge-manifold, consistently oriented triangle mesh.

    Faces are counterclockwise vertex-index triples. Edges are unique
    unordered pairs, stored sorted. Connectivity arrays are derived once at
    construction and the instance is immutable afterwards.

    Attributes
    ----------
    vertices : (n, 3) float array
    faces : (F, 3) int array
    edges : (E, 2) int array, each row sorted ascending
    face_edges : (F, 3) int array
        Edge index opposite each face corner: ``face_edges[f, m]`` is the
        edge joining the two corners of ``f`` other than corner ``m``.
    edge_faces : (E, 2) int array
        Incident faces per edge, -1 in the second slot for boundary edges.
    edge_boundary : (E,) bool array
    """

    vertices: np.ndarray
    faces: np.ndarray
    edges: np.ndarray = field(init=False)
    face_edges: np.ndarray = field(init=False)
    edge_faces: np.ndarray = field(init=False)
    edge_boundary: np.ndarray = field(init=False)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (F, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face vertex index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        self._validate_and_build()

    def _validate_and_build(self):
        f = self.faces
        degen = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if degen.any():
            raise MeshError(f"face {int(np.flatnonzero(degen)[0])} has repeated vertex indices")

        # Directed edges in CCW order; pair m of face f is opposite corner m.
        # Corner m's opposite directed edge runs (m+1) -> (m+2).
        di = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
        dj = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
        und = np.sort(np.stack([di, dj], axis=1), axis=1)
        edges, inv, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
        if (counts > 2).any():
            e = edges[np.flatnonzero(counts > 2)[0]]
            raise MeshError(f"non-manifold edge ({int(e[0])}, {int(e[1])}) shared by more than 2 faces")

        # Consistent orientation: every interior edge traversed once per direction.
        directed = np.stack([di, dj], axis=1)
        _, dcounts = np.unique(directed, axis=0, return_counts=True)
        if (dcounts > 1).any():
            # Locate one offending undirected edge for the error message.
            order = np.lexsort((dj, di))
            sd = directed[order]
            dup = np.flatnonzero((sd[1:] == sd[:-1]).all(axis=1))[0]
            e = sd[dup]
            raise MeshError(
                f"inconsistent orientation: directed edge ({int(e[0])}, {int(e[1])}) traversed twice"
            )

        F = len(f)
        face_edges = inv.reshape(3, F).T.copy()

        E = len(edges)
        edge_faces = np.full((E, 2), -1, dtype=np.int64)
        face_of_directed = np.tile(np.arange(F), 3)
        # First traversal fills slot 0, second slot 1.
        order = np.argsort(inv, kind="stable")
        sorted_e = inv[order]
        first = np.ones(len(inv), dtype=bool)
        first[1:] = sorted_e[1:] != sorted_e[:-1]
        edge_faces[sorted_e[first], 0] = face_of_directed[order][first]
        second = ~first
        edge_faces[sorted_e[second], 1] = face_of_directed[order][second]

        lengths = np.linalg.norm(
            self.vertices[edges[:, 1]] - self.vertices[edges[:, 0]], axis=1
        )
        if len(lengths) and lengths.min() <= 0.0:
            e = edges[int(np.argmin(lengths))]
            raise MeshError(f"zero-length edge ({int(e[0])}, {int(e[1])})")

        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "face_edges", face_edges)
        object.__setattr__(self, "edge_faces", edge_faces)
        object.__setattr__(self, "edge_boundary", edge_faces[:, 1] < 0)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    def edge_lengths(self) -> np.ndarray:
        """Embedding edge lengths, one per unique edge."""
        return np.linalg.norm(
            self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]], axis=1
        )

    def face_normals(self) -> np.ndarray:
        """Unit normals from the CCW corner order."""
        p = self.vertices[self.faces]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)


def _parse_floats(tokens, count, what, lineno):
    try:
        vals = [float(t) for t in tokens[:count]]
    except ValueError as exc:
        raise MeshError(f"line {lineno}: cannot parse {what}: {exc}") from None
    if len(vals) < count:
        raise MeshError(f"line {lineno}: expected {count} values for {what}")
    return vals


def _load_off(lines) -> Mesh:
    it = iter(lines)
    _, header = next(it, (None, None))
    if header is None or header != "OFF":
        raise MeshError("missing OFF header")
    lineno, counts = next(it, (None, None))
    if counts is None:
        raise MeshError("missing OFF count line")
    parts = counts.split()
    if len(parts) < 3:
        raise MeshError(f"line {lineno}: malformed OFF count line")
    nv, nf = int(parts[0]), int(parts[1])
    verts = np.empty((nv, 3))
    for i in range(nv):
        lineno, line = next(it, (None, None))
        if line is None:
            raise MeshError(f"unexpected end of file reading vertex {i}")
        verts[i] = _parse_floats(line.split(), 3, "vertex", lineno)
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        lineno, line = next(it, (None, None))
        if line is None:
            raise MeshError(f"unexpected end of file reading face {i}")
        tok = line.split()
        if int(tok[0]) != 3:
            raise MeshError(f"line {lineno}: face {i} has {tok[0]} sides; only triangles supported")
        faces[i] = [int(t) for t in tok[1:4]]
    return Mesh(verts, faces)


def _load_obj(lines) -> Mesh:
    verts, faces = [], []
    for lineno, line in lines:
        tok = line.split()
        if tok[0] == "v":
            verts.append(_parse_floats(tok[1:], 3, "vertex", lineno))
        elif tok[0] == "f":
            idx = []
            for t in tok[1:]:
                idx.append(int(t.split("/")[0]))
            if len(idx) != 3:
                raise MeshError(f"line {lineno}: only triangular faces supported")
            # OBJ indices are 1-based; negative indices count from the end.
            faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return Mesh(np.asarray(verts), np.asarray(faces, dtype=np.int64))


def _load_ply(lines) -> Mesh:
    it = iter(lines)
    lineno, magic = next(it, (None, None))
    if magic is None or magic.strip() != "ply":
        raise MeshError("missing ply header")
    nv = nf = None
    in_vertex = False
    vertex_props = []
    for lineno, line in it:
        tok = line.split()
        if tok[0] == "comment":
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise MeshError(f"line {lineno}: only ascii PLY supported")
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if tok[1] == "vertex":
                nv = int(tok[2])
            elif tok[1] == "face":
                nf = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            vertex_props.append(tok[-1])
        elif tok[0] == "end_header":
            break
    if nv is None or nf is None:
        raise MeshError("PLY header missing vertex or face element")
    try:
        xyz = [vertex_props.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise MeshError("PLY vertex element lacks x/y/z properties") from None
    verts = np.empty((nv, 3))
    for i in range(nv):
        lineno, line = next(it, (None, None))
        if line is None:
            raise MeshError(f"unexpected end of file reading vertex {i}")
        vals = _parse_floats(line.split(), len(vertex_props), "vertex", lineno)
        verts[i] = [vals[j] for j in xyz]
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        lineno, line = next(it, (None, None))
        if line is None:
            raise MeshError(f"unexpected end of file reading face {i}")
        tok = line.split()
        if int(tok[0]) != 3:
            raise MeshError(f"line {lineno}: only triangular faces supported")
        faces[i] = [int(t) for t in tok[1:4]]
    return Mesh(verts, faces)


_LOADERS = {"off": _load_off, "obj": _load_obj, "ply": _load_ply}


def load_mesh(path: str | os.PathLike, format: str | None = None) -> Mesh:
    """Read a triangle mesh from an OFF, OBJ, or ASCII PLY file.

    Format defaults to the file extension. Raises :class:`MeshError` on
    parse failure or any mesh-invariant violation (non-manifold edge,
    inconsistent orientation, degenerate face).
    """
    path = os.fspath(path)
    fmt = (format or os.path.splitext(path)[1].lstrip(".")).lower()
    if fmt not in _LOADERS:
        raise MeshError(f"unsupported mesh format {fmt!r}")
    with open(path) as fh:
        lines = [
            (lineno, line)
            for lineno, line in enumerate(fh, start=1)
            if line.strip() and not line.lstrip().startswith("#")
        ]
    lines = [(n, s.strip()) for n, s in lines]
    return _LOADERS[fmt](iter(lines))


def save_off(mesh: Mesh, path: str | os.PathLike) -> None:
    """Write a mesh as an ASCII OFF file."""
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_faces} {mesh.n_edges}\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
