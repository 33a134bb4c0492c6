"""Pullback geometry kernels and the global functionals S, V, r_h.

All bulk operations are vectorized over (cell, quadrature point).  The
convention throughout: A = grad X on the reference cell has shape
(..., d+1, d), the metric is G = A^T A, the Jacobian J = sqrt(det G)
coincides with the norm of the unnormalized normal nu (the exterior
product of the columns of A).
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .elements import lagrange_element
from .errors import DegenerateGeometryError
from .fields import SpaceField, dofmap
from .quadrature import QuadratureRule

#: reference-cell diameters (interval, triangle)
_REF_DIAM = {1: 1.0, 2: np.sqrt(2.0)}


@lru_cache(maxsize=None)
def tabulation(d: int, degree: int, rule: QuadratureRule):
    """Basis values and gradients at the rule's points; cached."""
    el = lagrange_element(d, degree)
    pts = rule.points.reshape(-1, d)
    phi = el.tabulate(pts)
    grad = el.tabulate_grad(pts)
    phi.setflags(write=False)
    grad.setflags(write=False)
    return phi, grad


def cell_coefficients(field: SpaceField) -> np.ndarray:
    """Per-cell dof coefficients, shape (C, L) or (C, L, ncomp)."""
    return field.dofs[field.dofmap.cell_nodes]


def values_at(field: SpaceField, rule: QuadratureRule) -> np.ndarray:
    """Field values at quadrature points, shape (C, Q[, ncomp])."""
    phi, _ = tabulation(field.mesh.dim, field.degree, rule)
    loc = cell_coefficients(field)
    return np.einsum("ql,cl...->cq...", phi, loc)


def gradients_at(field: SpaceField, rule: QuadratureRule) -> np.ndarray:
    """Reference gradients at quadrature points, (C, Q, d) or (C, Q, ncomp, d)."""
    _, grad = tabulation(field.mesh.dim, field.degree, rule)
    loc = cell_coefficients(field)
    return np.einsum("qld,cl...->cq...d", grad, loc)


def unnormalized_normal(A: np.ndarray, d: int) -> np.ndarray:
    """Exterior product of the tangent vectors; satisfies ||nu|| = J."""
    if d == 1:
        t = A[..., 0]
        return np.stack([t[..., 1], -t[..., 0]], axis=-1)
    return np.cross(A[..., 0], A[..., 1])


class Geometry(NamedTuple):
    """Pointwise pullback geometry arrays over (cell, point)."""

    A: np.ndarray      # grad X, (..., d+1, d)
    G: np.ndarray      # metric, (..., d, d)
    Ginv: np.ndarray   # inverse metric
    detG: np.ndarray
    J: np.ndarray      # sqrt(det G)
    nu: np.ndarray     # unnormalized normal, (..., d+1)
    n: np.ndarray      # unit normal


def _inv_2x2(G):
    det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
    inv = np.empty_like(G)
    inv[..., 0, 0] = G[..., 1, 1]
    inv[..., 1, 1] = G[..., 0, 0]
    inv[..., 0, 1] = -G[..., 0, 1]
    inv[..., 1, 0] = -G[..., 1, 0]
    return inv / det[..., None, None], det


def geometry_from_gradient(
    A: np.ndarray, d: int, scale: float, slab=None, time_point=None, cell=None,
    ncells=None,
) -> Geometry:
    """All pointwise geometry quantities; raises on rank-deficient metric.

    ``ncells`` unfolds a merged (time x cell) leading axis when locating
    the offending cell of a degenerate metric.
    """
    G = np.einsum("...kd,...ke->...de", A, A)
    if d == 1:
        detG = G[..., 0, 0]
        Ginv = 1.0 / detG[..., None, None]
    else:
        Ginv, detG = _inv_2x2(G)
    threshold = 1e-14 * (_REF_DIAM[d] * scale) ** (2 * d)
    if np.any(detG <= threshold):
        where = np.unravel_index(int(np.argmin(detG)), detG.shape)
        if cell is None and detG.ndim:
            cell = int(where[0]) if ncells is None else int(where[0]) % int(ncells)
        raise DegenerateGeometryError(
            f"metric determinant {detG[where]:.3e} below threshold "
            f"{threshold:.3e} (cell {cell})",
            cell=cell,
            slab=slab,
            time_point=time_point,
        )
    J = np.sqrt(detG)
    nu = unnormalized_normal(A, d)
    return Geometry(A, G, Ginv, detG, J, nu, nu / J[..., None])


def _scale(X: SpaceField) -> float:
    return float(np.abs(X.dofs).max())


def geometry_at(X: SpaceField, rule: QuadratureRule) -> Geometry:
    A = gradients_at(X, rule)
    return geometry_from_gradient(A, X.mesh.dim, _scale(X))


def area(X: SpaceField, rule: QuadratureRule) -> float:
    """Total surface measure S = sum over cells of the Jacobian integral."""
    geo = geometry_at(X, rule)
    return float(np.einsum("q,cq->", rule.weights, geo.J))


def volume(X: SpaceField, rule: QuadratureRule) -> float:
    """Enclosed volume via the divergence theorem.

    The integrand X . nu is polynomial on each reference cell, so any rule
    of sufficient degree evaluates V exactly.
    """
    geo = geometry_at(X, rule)
    vals = values_at(X, rule)
    return float(np.einsum("q,cqk,cqk->", rule.weights, vals, geo.nu)) / (X.mesh.dim + 1)


def mesh_quality(X: SpaceField, X0: SpaceField, rule: QuadratureRule) -> float:
    """Worst-to-best ratio of the pointwise area-distortion factor sqrt(J/J0)."""
    if X.mesh is not X0.mesh or X.degree != X0.degree:
        raise ValueError("mesh-quality comparison requires matching mesh and degree")
    ratio = np.sqrt(geometry_at(X, rule).J / geometry_at(X0, rule).J)
    return float(ratio.max() / ratio.min())


def area_rate(X: SpaceField, W: SpaceField, rule: QuadratureRule) -> float:
    """d/dt of area for X(t) = X + t W at t=0 (trace identity)."""
    geo = geometry_at(X, rule)
    B = gradients_at(W, rule)
    tr = np.einsum("cqkd,cqde,cqke->cq", geo.A, geo.Ginv, B)
    return float(np.einsum("q,cq,cq->", rule.weights, geo.J, tr))


def volume_rate(X: SpaceField, W: SpaceField, rule: QuadratureRule) -> float:
    """d/dt of enclosed volume for X(t) = X + t W at t=0."""
    geo = geometry_at(X, rule)
    Wv = values_at(W, rule)
    return float(np.einsum("q,cqk,cqk->", rule.weights, Wv, geo.nu))


# -- pointwise API ------------------------------------------------------------


@dataclass(frozen=True)
class CellGeometry:
    """Pullback geometry of the map X at a single reference point of a cell."""

    grad: np.ndarray      # (d+1, d)
    metric: np.ndarray    # (d, d)
    jacobian: float
    nu: np.ndarray        # (d+1,)
    normal: np.ndarray    # (d+1,)
    metric_inv: np.ndarray


def cell_geometry(X: SpaceField, cell: int, ref_point) -> CellGeometry:
    d = X.mesh.dim
    el = lagrange_element(d, X.degree)
    pt = np.atleast_1d(np.asarray(ref_point, dtype=float)).reshape(1, d)
    grad = el.tabulate_grad(pt)[0]  # (L, d)
    loc = X.dofs[X.dofmap.cell_nodes[cell]]  # (L, d+1)
    A = np.einsum("ld,lk->kd", grad, loc)
    geo = geometry_from_gradient(A, d, _scale(X), cell=cell)
    return CellGeometry(A, geo.G, float(geo.J), geo.nu, geo.n, geo.Ginv)


def surface_gradient(f: SpaceField, cell: int, ref_point, geom: CellGeometry) -> np.ndarray:
    """Surface gradient of f at one point.

    Scalar f: a tangent vector in R^{d+1}.  Vector f: a (d+1, d+1) matrix
    whose j-th column is the surface gradient of component j; for f = X
    this is the tangential projector I - n n^T.
    """
    d = f.mesh.dim
    el = lagrange_element(d, f.degree)
    pt = np.atleast_1d(np.asarray(ref_point, dtype=float)).reshape(1, d)
    grad = el.tabulate_grad(pt)[0]
    loc = f.dofs[f.dofmap.cell_nodes[cell]]
    ref_grad = np.einsum("ld,l...->...d", grad, loc)  # (d,) or (ncomp, d)
    if ref_grad.ndim == 1:
        return geom.grad @ geom.metric_inv @ ref_grad
    return geom.grad @ geom.metric_inv @ ref_grad.T
