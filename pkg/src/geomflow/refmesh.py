"""Reference manifolds: closed simplicial meshes and built-in generators.

A ReferenceMesh is the fixed domain of the evolving parameterization.
For d=1 it is a closed polygon in the plane (segments on a circle); for
d=2 a closed, consistently oriented triangle surface in 3-space.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidMeshError


@dataclass(frozen=True, eq=False)
class ReferenceMesh:
    """Immutable closed simplicial d-manifold embedded in R^{d+1}."""

    dim: int
    vertices: np.ndarray  # (V, d+1)
    cells: np.ndarray  # (C, d+1), consistently oriented

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float))
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=np.int64))
        self.vertices.setflags(write=False)
        self.cells.setflags(write=False)
        validate_mesh(self)

    @property
    def nvertices(self) -> int:
        return len(self.vertices)

    @property
    def ncells(self) -> int:
        return len(self.cells)

    @property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs, lexicographically ordered (d=2)."""
        if self.dim == 1:
            return np.sort(self.cells, axis=1)
        return _unique_edges(self.cells)

    def max_edge_length(self) -> float:
        if self.dim == 1:
            a, b = self.cells[:, 0], self.cells[:, 1]
            return float(np.linalg.norm(self.vertices[a] - self.vertices[b], axis=1).max())
        e = self.edges
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).max())


def _unique_edges(cells: np.ndarray) -> np.ndarray:
    raw = np.concatenate([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]])
    return np.unique(np.sort(raw, axis=1), axis=0)


def validate_mesh(mesh: ReferenceMesh) -> None:
    """Closed-manifold, orientation and Euler-characteristic checks."""
    if mesh.dim not in (1, 2):
        raise InvalidMeshError(f"unsupported manifold dimension {mesh.dim}")
    if mesh.cells.shape[1] != mesh.dim + 1:
        raise InvalidMeshError("cell connectivity has wrong arity")
    if mesh.vertices.shape[1] != mesh.dim + 1:
        raise InvalidMeshError("vertex coordinates have wrong ambient dimension")
    if mesh.cells.min() < 0 or mesh.cells.max() >= mesh.nvertices:
        raise InvalidMeshError("cell references vertex out of range")

    if mesh.dim == 1:
        # every vertex appears exactly once as a segment start and once as an end
        starts = np.bincount(mesh.cells[:, 0], minlength=mesh.nvertices)
        ends = np.bincount(mesh.cells[:, 1], minlength=mesh.nvertices)
        if not (np.all(starts == 1) and np.all(ends == 1)):
            raise InvalidMeshError("polygon is not closed and consistently oriented")
        if mesh.nvertices != mesh.ncells:
            raise InvalidMeshError("closed polygon requires V == E")
        return

    # d=2: each directed edge must occur exactly once, its reverse exactly once
    directed = np.concatenate(
        [mesh.cells[:, [0, 1]], mesh.cells[:, [1, 2]], mesh.cells[:, [2, 0]]]
    )
    keys = directed[:, 0] * mesh.nvertices + directed[:, 1]
    if len(np.unique(keys)) != len(keys):
        raise InvalidMeshError("inconsistent orientation: repeated directed edge")
    rev = directed[:, 1] * mesh.nvertices + directed[:, 0]
    if not np.all(np.isin(keys, rev)):
        raise InvalidMeshError("open manifold: edge without oppositely oriented twin")
    V, E, F = mesh.nvertices, len(_unique_edges(mesh.cells)), mesh.ncells
    if V - E + F != 2:
        raise InvalidMeshError(f"Euler characteristic {V - E + F} != 2")


def make_circle_mesh(n_segments: int) -> ReferenceMesh:
    """Unit-circle polygon with arc-length-uniform vertices, oriented CCW."""
    if n_segments < 3:
        raise InvalidMeshError("a closed polygon needs at least 3 segments")
    ang = 2.0 * np.pi * np.arange(n_segments) / n_segments
    verts = np.column_stack([np.cos(ang), np.sin(ang)])
    cells = np.column_stack(
        [np.arange(n_segments), (np.arange(n_segments) + 1) % n_segments]
    )
    return ReferenceMesh(1, verts, cells)


_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array(
    [
        [-1, _ICO_T, 0], [1, _ICO_T, 0], [-1, -_ICO_T, 0], [1, -_ICO_T, 0],
        [0, -1, _ICO_T], [0, 1, _ICO_T], [0, -1, -_ICO_T], [0, 1, -_ICO_T],
        [_ICO_T, 0, -1], [_ICO_T, 0, 1], [-_ICO_T, 0, -1], [-_ICO_T, 0, 1],
    ],
    dtype=float,
)
_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
)


def make_icosphere_mesh(refinements: int) -> ReferenceMesh:
    """Icosahedron uniformly refined ``refinements`` times, projected to S^2."""
    if refinements < 0:
        raise InvalidInputError("refinements must be >= 0")
    verts = _ICO_VERTS / np.linalg.norm(_ICO_VERTS, axis=1, keepdims=True)
    faces = _ICO_FACES.copy()
    for _ in range(refinements):
        verts, faces = _subdivide(verts, faces)
        verts = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    return ReferenceMesh(2, verts, faces)


def _subdivide(verts, faces):
    edge_mid = {}
    verts = list(verts)

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in edge_mid:
            edge_mid[key] = len(verts)
            verts.append(0.5 * (verts[a] + verts[b]))
        return edge_mid[key]

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(verts), np.array(new_faces)


def make_cuboid_mesh(lx: float, ly: float, lz: float, density: int = 3) -> ReferenceMesh:
    """Closed triangulated cuboid surface centered at the origin.

    Each face carries a structured grid with ``round(length * density)``
    subdivisions per side; quads are split along alternating diagonals.
    At (8, 1, 1) and density 3 this reproduces a 308-vertex, 918-edge,
    612-triangle surface.
    """
    if min(lx, ly, lz) <= 0:
        raise InvalidInputError("cuboid side lengths must be positive")
    if density < 1:
        raise InvalidInputError("density must be >= 1")
    n = [max(1, round(l * density)) for l in (lx, ly, lz)]
    half = np.array([lx, ly, lz]) / 2.0

    verts = []
    faces = []
    # face = (fixed axis, sign); (u_axis, v_axis) chosen so that u x v points outward
    specs = [
        (0, +1, 1, 2), (0, -1, 2, 1),
        (1, +1, 2, 0), (1, -1, 0, 2),
        (2, +1, 0, 1), (2, -1, 1, 0),
    ]
    lengths = (lx, ly, lz)
    for axis, sign, ua, va in specs:
        nu, nv = n[ua], n[va]
        base = len(verts)
        for j in range(nv + 1):
            for i in range(nu + 1):
                p = np.zeros(3)
                p[axis] = sign * half[axis]
                p[ua] = -half[ua] + i / nu * lengths[ua]
                p[va] = -half[va] + j / nv * lengths[va]
                verts.append(p)
        for j in range(nv):
            for i in range(nu):
                v00 = base + j * (nu + 1) + i
                v10 = v00 + 1
                v01 = v00 + (nu + 1)
                v11 = v01 + 1
                if (i + j) % 2 == 0:
                    faces += [[v00, v10, v11], [v00, v11, v01]]
                else:
                    faces += [[v00, v10, v01], [v10, v11, v01]]
    verts = np.array(verts)
    faces = np.array(faces)

    # weld coincident vertices along face seams
    scale = max(lx, ly, lz)
    key = np.round(verts / (1e-12 * scale)).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    welded = verts[first]
    faces = inverse[faces]
    return ReferenceMesh(2, welded, faces)


# -- mesh file I/O -----------------------------------------------------------

POLYGON_HEADER = "GEOMFLOW-POLYGON v1"


def write_obj(path, vertices, faces) -> None:
    with open(path, "w") as f:
        f.write("# geomflow surface snapshot\n")
        for v in vertices:
            f.write("v %.17g %.17g %.17g\n" % tuple(v))
        for c in faces:
            f.write("f %d %d %d\n" % tuple(int(i) + 1 for i in c))


def read_obj(path) -> ReferenceMesh:
    verts, faces = [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    if not verts or not faces:
        raise InvalidMeshError(f"no triangle data in {path}")
    return ReferenceMesh(2, np.array(verts), np.array(faces))


def write_polygon(path, vertices) -> None:
    """Closed-polygon text format: header, count, one 'x y' line per vertex."""
    with open(path, "w") as f:
        f.write(POLYGON_HEADER + "\n")
        f.write(f"{len(vertices)}\n")
        for v in vertices:
            f.write("%.17g %.17g\n" % tuple(v))


def read_polygon(path) -> ReferenceMesh:
    with open(path) as f:
        header = f.readline().strip()
        if header != POLYGON_HEADER:
            raise InvalidMeshError(f"bad polygon header in {path}: {header!r}")
        count = int(f.readline())
        verts = np.array([[float(x) for x in f.readline().split()] for _ in range(count)])
    cells = np.column_stack([np.arange(count), (np.arange(count) + 1) % count])
    return ReferenceMesh(1, verts, cells)


def load_mesh(path) -> ReferenceMesh:
    """Dispatch on file content: OBJ triangles or closed-polygon text."""
    with open(path) as f:
        first = f.readline().strip()
    if first == POLYGON_HEADER:
        return read_polygon(path)
    return read_obj(path)
