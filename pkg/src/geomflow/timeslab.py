"""Trial/test polynomial bases on the unit time slab and the quadrature policy.

Every slab is mapped to [0, 1]; physical timesteps enter through chain-rule
factors at the point of use.  Trial functions of stage count s are degree-s
polynomials pinned to known data at slab start; test functions are degree
s-1, nodal at the s Gauss points.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg

from .errors import InvalidInputError
from .fields import SpaceField
from .quadrature import QuadratureRule, simplex_quadrature, time_quadrature


class TimeBasis:
    """Nodal Lagrange basis on [0, 1] at prescribed nodes."""

    def __init__(self, nodes):
        self.nodes = np.asarray(nodes, dtype=float)
        m = len(self.nodes)
        V = np.vander(self.nodes, m, increasing=True)
        self._coeffs = np.linalg.solve(V, np.eye(m))  # (monomial, node)

    @property
    def nnodes(self) -> int:
        return len(self.nodes)

    def eval(self, t) -> np.ndarray:
        """Basis values; shape (npts, nnodes)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        V = np.vander(t, self.nnodes, increasing=True)
        return V @ self._coeffs

    def eval_deriv(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        m = self.nnodes
        V = np.zeros((len(t), m))
        for j in range(1, m):
            V[:, j] = j * t ** (j - 1)
        return V @ self._coeffs


def _gauss_nodes(s: int) -> np.ndarray:
    x, _ = npleg.leggauss(s)
    return 0.5 * (x + 1.0)


@lru_cache(maxsize=None)
def trial_basis(s: int) -> TimeBasis:
    """Nodal basis of P_s on [0,1]: node 0 (known data) plus the s Gauss points."""
    if s < 1:
        raise InvalidInputError("stage count must be >= 1")
    return TimeBasis(np.concatenate([[0.0], _gauss_nodes(s)]))


@lru_cache(maxsize=None)
def test_basis(s: int) -> TimeBasis:
    """Nodal basis of P_{s-1} on [0,1] at the s Gauss points."""
    if s < 1:
        raise InvalidInputError("stage count must be >= 1")
    return TimeBasis(_gauss_nodes(s))


@dataclass(eq=False)
class TimePolyField:
    """Polynomial-in-time field: one SpaceField-shaped coefficient per node."""

    basis: TimeBasis
    coeffs: np.ndarray  # (nnodes, N) or (nnodes, N, ncomp)
    t_start: float = 0.0
    dt: float = 1.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape[0] != self.basis.nnodes:
            raise InvalidInputError("coefficient count does not match time basis")

    @property
    def degree(self) -> int:
        return self.basis.nnodes - 1

    def at(self, sigma) -> np.ndarray:
        """Dof array at unit-slab coordinate sigma."""
        return np.einsum("m,m...->...", self.basis.eval(sigma)[0], self.coeffs)

    def deriv_at(self, sigma) -> np.ndarray:
        """Physical time derivative of the dof array at sigma."""
        w = self.basis.eval_deriv(sigma)[0] / self.dt
        return np.einsum("m,m...->...", w, self.coeffs)

    def derivative(self) -> "TimePolyField":
        """Exact derivative as a degree-(m-1) field on Gauss nodes."""
        m = self.degree
        tb = test_basis(m) if m >= 1 else TimeBasis([0.5])
        vals = np.stack([self.deriv_at(t) for t in tb.nodes])
        return TimePolyField(tb, vals, self.t_start, self.dt)


@dataclass(frozen=True, eq=False)
class QuadraturePolicy:
    """Matched quadrature rules for one (d, k, s) discretization.

    ``time_rule`` is shared by every paired time integral; the elevated
    rules are applied only where non-polynomial integrands require
    quadrature-limited accuracy (the position-gradient right-hand side).
    """

    time_rule: QuadratureRule
    time_rule_elev: QuadratureRule
    space_rule: QuadratureRule
    space_rule_elev: QuadratureRule


def required_time_degree(d: int, s: int) -> int:
    """Exactness degree that integrates the normal-velocity pairing exactly."""
    return d * s + 2 * s - 2


def default_policy(
    d: int,
    k: int,
    s: int,
    time_rule_points: int | None = None,
    elevation_points: int = 3,
    spatial_degree: int | None = None,
    spatial_elevation: int = 4,
) -> QuadraturePolicy:
    q = time_rule_points or (required_time_degree(d, s) + 1 + 1) // 2
    if 2 * q - 1 < required_time_degree(d, s):
        raise InvalidInputError(
            f"time rule with {q} points cannot reach degree {required_time_degree(d, s)}"
        )
    # k=1 is affine: the metric and normal are cell constants, every spatial
    # integrand is polynomial of degree <= 3 and degree 2 rules (exact to 3)
    # already integrate all blocks exactly
    base_deg = spatial_degree or (2 if k == 1 else max(2 * k + 2, (d + 1) * k))
    return QuadraturePolicy(
        time_rule=time_quadrature("gauss", q),
        time_rule_elev=time_quadrature("gauss", q + elevation_points),
        space_rule=simplex_quadrature(d, base_deg),
        space_rule_elev=simplex_quadrature(d, base_deg + spatial_elevation),
    )


def intermediate_normal_check(
    X: TimePolyField,
    y: SpaceField,
    mesh_degree: int | None = None,
    time_rule: QuadratureRule | None = None,
    space_rule: QuadratureRule | None = None,
) -> tuple[float, float]:
    """Two evaluations of the slab normal-velocity integral (d=2, s=1).

    lhs applies the given time rule (default 3-point Gauss-Lobatto) to the
    pullback integrand Xdot . nu; rhs contracts the endpoint increment with
    the Simpson-weighted intermediate normal.  For any time rule of degree
    >= 3 the two agree to round-off, the integrand being cubic in time.
    """
    from . import geometry as geom

    if y.mesh.dim != 2:
        raise InvalidInputError("intermediate-normal identity requires d=2")
    if X.degree != 1:
        raise InvalidInputError("intermediate-normal identity requires s=1")
    k = mesh_degree or y.degree
    rule = space_rule or simplex_quadrature(2, 4 * k - 2)
    trule = time_rule or time_quadrature("lobatto", 3)

    mesh = y.mesh
    yv = geom.values_at(y, rule)
    xdot = X.deriv_at(0.0)  # constant in time for s=1

    def nu_at(sigma):
        field = SpaceField(mesh, k, X.at(sigma))
        return geom.geometry_at(field, rule).nu

    def xdot_field(sigma):
        f = SpaceField(mesh, k, xdot)
        return geom.values_at(f, rule)

    xdv = xdot_field(0.0)
    lhs = 0.0
    for sigma, wt in zip(trule.points, trule.weights):
        nu = nu_at(float(sigma))
        lhs += wt * X.dt * float(np.einsum("q,cqk,cqk,cq->", rule.weights, xdv, nu, yv))

    nu_hat = (nu_at(0.0) + 4.0 * nu_at(0.5) + nu_at(1.0)) / 6.0
    dX = SpaceField(mesh, k, X.at(1.0) - X.at(0.0))
    dXv = geom.values_at(dX, rule)
    rhs = float(np.einsum("q,cqk,cqk,cq->", rule.weights, dXv, nu_hat, yv))
    return lhs, rhs
