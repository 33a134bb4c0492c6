"""Global Lagrange dof layout and nodal fields on a reference mesh."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .elements import lagrange_element
from .errors import ConfigError, InvalidInputError
from .refmesh import ReferenceMesh


class DofMap:
    """Global scalar dof layout: vertices, then edge nodes, then cell interiors."""

    def __init__(self, mesh: ReferenceMesh, degree: int):
        self.mesh = mesh
        self.degree = degree
        self.element = lagrange_element(mesh.dim, degree)
        k = degree
        d = mesh.dim
        V, C = mesh.nvertices, mesh.ncells

        if d == 1:
            self.ndofs = V + C * (k - 1)
            cn = np.empty((C, k + 1), dtype=np.int64)
            cn[:, :2] = mesh.cells
            for i in range(k - 1):
                cn[:, 2 + i] = V + np.arange(C) * (k - 1) + i
            self.cell_nodes = cn
        else:
            edges = mesh.edges
            E = len(edges)
            edge_id = {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}
            n_int = (k - 1) * (k - 2) // 2
            self.ndofs = V + E * (k - 1) + C * n_int
            cn = np.empty((C, self.element.nnodes), dtype=np.int64)
            cn[:, :3] = mesh.cells
            for ci, (a, b, c) in enumerate(mesh.cells):
                col = 3
                for u, v in ((a, b), (b, c), (c, a)):
                    e = edge_id[(min(u, v), max(u, v))]
                    idx = V + e * (k - 1) + np.arange(k - 1)
                    cn[ci, col : col + k - 1] = idx if u < v else idx[::-1]
                    col += k - 1
                cn[ci, col:] = V + E * (k - 1) + ci * n_int + np.arange(n_int)
            self.cell_nodes = cn
        self.cell_nodes.setflags(write=False)

    def node_coordinates(self) -> np.ndarray:
        """Reference-immersion coordinates of every global node, shape (N, d+1)."""
        mesh, el = self.mesh, self.element
        coords = np.zeros((self.ndofs, mesh.dim + 1))
        ref = el.nodes  # (L, d)
        v0 = mesh.vertices[mesh.cells[:, 0]]  # (C, d+1)
        tang = np.stack(
            [mesh.vertices[mesh.cells[:, i + 1]] - v0 for i in range(mesh.dim)], axis=-1
        )  # (C, d+1, d)
        pts = v0[:, None, :] + np.einsum("ckd,ld->clk", tang, ref)
        coords[self.cell_nodes.ravel()] = pts.reshape(-1, mesh.dim + 1)
        return coords


@lru_cache(maxsize=None)
def dofmap(mesh: ReferenceMesh, degree: int) -> DofMap:
    return DofMap(mesh, degree)


@dataclass(eq=False)
class SpaceField:
    """Scalar or vector Lagrange field: dofs indexed by global nodes."""

    mesh: ReferenceMesh
    degree: int
    dofs: np.ndarray  # (N,) scalar or (N, d+1) vector

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=float)
        n = dofmap(self.mesh, self.degree).ndofs
        if self.dofs.shape[0] != n:
            raise InvalidInputError(
                f"dof count {self.dofs.shape[0]} does not match layout size {n}"
            )
        if self.dofs.ndim == 2 and self.dofs.shape[1] != self.mesh.dim + 1:
            raise InvalidInputError("vector fields carry d+1 components")

    @property
    def dofmap(self) -> DofMap:
        return dofmap(self.mesh, self.degree)

    @property
    def ncomponents(self) -> int:
        return 1 if self.dofs.ndim == 1 else self.dofs.shape[1]

    def copy(self) -> "SpaceField":
        return SpaceField(self.mesh, self.degree, self.dofs.copy())


def _dumbbell(points: np.ndarray) -> np.ndarray:
    x, y, z = points.T
    theta = np.arctan2(z, y)
    phi = np.arccos(np.clip(x, -1.0, 1.0))
    waist = 0.6 * np.cos(phi) ** 2 + 0.4
    return np.column_stack(
        [np.cos(phi), waist * np.cos(theta) * np.sin(phi), waist * np.sin(theta) * np.sin(phi)]
    )


def _perturbed_ellipsoid(p: np.ndarray) -> np.ndarray:
    x, y, z = p.T
    return np.column_stack(
        [2.0 * x + 0.5 * y * z, 1.5 * y + 0.4 * x * z, z + 0.35 * x * y]
    )


#: Named initial-geometry maps. "identity" keeps the flat reference immersion;
#: the others interpolate an analytic map of the unit sphere/circle at the
#: Lagrange nodes (nodes are radially normalized first).
SHAPES = ("identity", "sphere", "perturbed_ellipsoid", "dumbbell")


def map_initial_geometry(mesh: ReferenceMesh, shape: str, degree: int = 1) -> SpaceField:
    """Degree-k nodal interpolant of a named initial geometry."""
    if shape not in SHAPES:
        raise ConfigError(f"unknown initial shape {shape!r}; choose from {SHAPES}")
    dm = dofmap(mesh, degree)
    coords = dm.node_coordinates()
    if shape == "identity":
        return SpaceField(mesh, degree, coords)
    unit = coords / np.linalg.norm(coords, axis=1, keepdims=True)
    if shape == "sphere":
        return SpaceField(mesh, degree, unit)
    if mesh.dim != 2:
        raise ConfigError(f"shape {shape!r} requires a spherical (d=2) reference mesh")
    mapped = _perturbed_ellipsoid(unit) if shape == "perturbed_ellipsoid" else _dumbbell(unit)
    return SpaceField(mesh, degree, mapped)
