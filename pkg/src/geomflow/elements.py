"""Lagrange reference elements on the unit interval and unit triangle.

Node ordering matches the global dof layout: cell vertices first, then
edge nodes (along each edge in local direction), then interior nodes.
"""

from functools import lru_cache

import numpy as np

from .errors import InvalidInputError


def _interval_nodes(k: int) -> np.ndarray:
    # endpoints first, then interior left-to-right
    pts = [0.0, 1.0] + [i / k for i in range(1, k)]
    return np.array(pts)[:, None]


def _triangle_nodes(k: int) -> np.ndarray:
    verts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    pts = list(verts)
    # edges (v0,v1), (v1,v2), (v2,v0), traversed in that direction
    for a, b in ((0, 1), (1, 2), (2, 0)):
        va, vb = np.array(verts[a]), np.array(verts[b])
        for i in range(1, k):
            pts.append(tuple(va + (i / k) * (vb - va)))
    for j in range(1, k):
        for i in range(1, k - j):
            pts.append((i / k, j / k))
    return np.array(pts)


def _monomial_exponents(d: int, k: int) -> list[tuple[int, ...]]:
    if d == 1:
        return [(i,) for i in range(k + 1)]
    return [(i, j) for j in range(k + 1) for i in range(k + 1 - j)]


class LagrangeElement:
    """Degree-k Lagrange basis on the reference interval or triangle."""

    def __init__(self, d: int, degree: int):
        if d not in (1, 2):
            raise InvalidInputError(f"unsupported element dimension {d}")
        if degree < 1:
            raise InvalidInputError("Lagrange degree must be >= 1")
        self.d = d
        self.degree = degree
        self.nodes = _interval_nodes(degree) if d == 1 else _triangle_nodes(degree)
        self.exponents = _monomial_exponents(d, degree)
        V = self._monomials(self.nodes)
        self._coeffs = np.linalg.solve(V, np.eye(len(self.nodes)))

    @property
    def nnodes(self) -> int:
        return len(self.nodes)

    def _monomials(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        cols = []
        for e in self.exponents:
            col = np.ones(len(pts))
            for axis, p in enumerate(e):
                if p:
                    col = col * pts[:, axis] ** p
            cols.append(col)
        return np.column_stack(cols)

    def _monomial_grads(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        out = np.zeros((len(pts), len(self.exponents), self.d))
        for j, e in enumerate(self.exponents):
            for axis in range(self.d):
                if e[axis] == 0:
                    continue
                col = float(e[axis]) * pts[:, axis] ** (e[axis] - 1)
                for other in range(self.d):
                    if other != axis and e[other]:
                        col = col * pts[:, other] ** e[other]
                out[:, j, axis] = col
        return out

    def tabulate(self, pts: np.ndarray) -> np.ndarray:
        """Basis values at reference points; shape (npts, nnodes)."""
        return self._monomials(pts) @ self._coeffs

    def tabulate_grad(self, pts: np.ndarray) -> np.ndarray:
        """Basis gradients at reference points; shape (npts, nnodes, d)."""
        mg = self._monomial_grads(pts)
        return np.einsum("pja,ji->pia", mg, self._coeffs)


@lru_cache(maxsize=None)
def lagrange_element(d: int, degree: int) -> LagrangeElement:
    return LagrangeElement(d, degree)
