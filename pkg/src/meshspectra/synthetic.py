"""Procedural test meshes: icospheres, cylinders, grids, compound shapes."""

from __future__ import annotations

import numpy as np

from .meshio import Mesh


def tetrahedron(scale: float = 1.0) -> Mesh:
    """Regular tetrahedron centered at the origin."""
    v = np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64
    ) * (scale / np.sqrt(3.0))
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return Mesh(v, f)


def icosahedron() -> Mesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    v /= np.linalg.norm(v[0])
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return Mesh(v, f)


def _subdivide(mesh: Mesh) -> Mesh:
    """Loop-style 1-to-4 topological subdivision (midpoint insertion)."""
    v = mesh.vertices
    mid = 0.5 * (v[mesh.edges[:, 0]] + v[mesh.edges[:, 1]])
    verts = np.vstack([v, mid])
    n = len(v)
    faces = []
    for f in range(mesh.n_faces):
        i, j, k = mesh.faces[f]
        # Midpoint of the edge opposite corner m sits at face_edges[f, m].
        a = n + mesh.face_edges[f, 0]   # midpoint of (j, k)
        b = n + mesh.face_edges[f, 1]   # midpoint of (i, k)
        c = n + mesh.face_edges[f, 2]   # midpoint of (i, j)
        faces.extend([[i, c, b], [j, a, c], [k, b, a], [a, b, c]])
    return Mesh(verts, np.asarray(faces))


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> Mesh:
    """Unit icosphere (subdivided icosahedron projected onto the sphere)."""
    mesh = icosahedron()
    for _ in range(subdivisions):
        mesh = _subdivide(mesh)
        v = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True)
        mesh = Mesh(v, mesh.faces)
    return Mesh(mesh.vertices * radius, mesh.faces)


def stretched_icosphere(subdivisions: int = 3, z_scale: float = 1.3) -> Mesh:
    """Icosphere scaled along z: the standard mild non-isometry test shape."""
    base = icosphere(subdivisions)
    v = base.vertices.copy()
    v[:, 2] *= z_scale
    return Mesh(v, base.faces)


def bumpy_sphere(subdivisions: int = 2, amplitude: float = 0.25) -> Mesh:
    """Icosphere with a smooth radial bump field.

    Breaks the sphere's spectral degeneracies, which makes it the workhorse
    mesh for eigen-derivative checks (simple, well-separated eigenvalues).
    """
    base = icosphere(subdivisions)
    v = base.vertices
    bump = (
        np.sin(3.0 * v[:, 0]) * np.sin(2.0 * v[:, 1])
        + 0.5 * np.cos(2.0 * v[:, 2])
    )
    r = 1.0 + amplitude * bump
    return Mesh(v * r[:, None], base.faces)


def plane_grid(nx: int = 10, ny: int = 10, size: float = 1.0) -> Mesh:
    """Flat triangulated rectangle in the z=0 plane."""
    xs = np.linspace(0.0, size, nx)
    ys = np.linspace(0.0, size, ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel(), np.zeros(nx * ny)], axis=1)
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a = i * ny + j
            b = (i + 1) * ny + j
            faces.append([a, b, a + 1])
            faces.append([b, b + 1, a + 1])
    return Mesh(verts, np.asarray(faces))


def cylinder(
    radius: float = 1.0,
    height: float = 2.0,
    segments: int = 24,
    rings: int = 12,
    capped: bool = False,
) -> Mesh:
    """Open (or capped) cylinder around the z axis."""
    zs = np.linspace(-height / 2.0, height / 2.0, rings + 1)
    th = np.arange(segments) * (2.0 * np.pi / segments)
    verts = []
    for z in zs:
        for t in th:
            verts.append([radius * np.cos(t), radius * np.sin(t), z])
    faces = []
    for r in range(rings):
        for s in range(segments):
            a = r * segments + s
            b = r * segments + (s + 1) % segments
            c = (r + 1) * segments + s
            d = (r + 1) * segments + (s + 1) % segments
            faces.append([a, b, d])
            faces.append([a, d, c])
    verts = np.asarray(verts, dtype=np.float64)
    if capped:
        nb = len(verts)
        verts = np.vstack([verts, [[0, 0, zs[0]], [0, 0, zs[-1]]]])
        for s in range(segments):
            faces.append([nb, (s + 1) % segments, s])
            faces.append([nb + 1, rings * segments + s, rings * segments + (s + 1) % segments])
    return Mesh(verts, np.asarray(faces))


def single_triangle() -> Mesh:
    """Lone unit equilateral triangle in the z=0 plane."""
    v = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, np.sqrt(3.0) / 2.0, 0.0]]
    )
    return Mesh(v, np.array([[0, 1, 2]]))


def triangle_strip() -> Mesh:
    """Two triangles sharing one interior edge."""
    v = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.9, 0.0], [1.5, 0.9, 0.0]]
    )
    return Mesh(v, np.array([[0, 1, 2], [1, 3, 2]]))


def sphere_cylinder_compound(
    sphere_subdivisions: int = 3,
    segments: int = 16,
    rings: int = 12,
) -> tuple[Mesh, np.ndarray]:
    """Disjoint sphere + capped cylinder as one mesh, with part labels.

    Returns the compound mesh and a per-vertex label array (0 = sphere,
    1 = cylinder). The parts are separated along x so Euclidean neighborhoods
    stay mostly within a part.
    """
    sph = icosphere(sphere_subdivisions)
    cyl = cylinder(radius=0.55, height=2.2, segments=segments, rings=rings, capped=True)
    sv = sph.vertices + np.array([-1.8, 0.0, 0.0])
    cv = cyl.vertices + np.array([1.8, 0.0, 0.0])
    verts = np.vstack([sv, cv])
    faces = np.vstack([sph.faces, cyl.faces + len(sv)])
    labels = np.concatenate(
        [np.zeros(len(sv), dtype=np.int64), np.ones(len(cv), dtype=np.int64)]
    )
    return Mesh(verts, faces), labels


def compound_sector_labels(mesh: Mesh, part_labels: np.ndarray) -> np.ndarray:
    """Alternating azimuthal quarter-sector labels around each part's axis.

    The pattern is invariant under the descriptor of the unmodified
    operator (azimuthal symmetry of each part), so a frozen-operator
    classifier cannot beat the majority class; learned operator parameters
    must break the symmetry. Used by the toy segmentation benchmark.
    """
    v = mesh.vertices
    x = np.where(part_labels == 0, v[:, 0] + 1.8, v[:, 0] - 1.8)
    phi = np.arctan2(v[:, 1], x)
    return np.floor((phi + np.pi) / (np.pi / 2)).astype(np.int64) % 2
