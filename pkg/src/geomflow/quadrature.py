"""Quadrature rules on the reference interval, reference triangle, and time slab.

All rules have strictly positive weights.  Interval and time rules live on
[0, 1]; triangle rules live on the reference triangle with vertices
(0,0), (1,0), (0,1).
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import roots_jacobi

from .errors import CapabilityError

#: Largest exactness degree guaranteed by simplex_quadrature.
MAX_DEGREE = 30


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Points, positive weights and exactness degree of a quadrature rule.

    ``points`` has shape (n,) for interval/time rules and (n, 2) for
    triangle rules.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        self.points.setflags(write=False)
        self.weights.setflags(write=False)
        if np.any(self.weights <= 0.0):
            raise ValueError("quadrature weights must be positive")

    @property
    def npoints(self) -> int:
        return len(self.weights)


def _gauss_01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = npleg.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def simplex_quadrature(d: int, degree: int) -> QuadratureRule:
    """Positive-weight rule exact to ``degree`` on the reference simplex.

    For d=2 this is a collapsed (Duffy) Gauss-Legendre x Gauss-Jacobi
    product rule; weights are positive for any degree.
    """
    if d not in (1, 2):
        raise CapabilityError(f"unsupported simplex dimension {d}")
    if degree < 0 or degree > MAX_DEGREE:
        raise CapabilityError(
            f"requested exactness degree {degree} outside supported range "
            f"[0, {MAX_DEGREE}]"
        )
    m = max(1, (degree + 2) // 2)  # 2m-1 >= degree
    if d == 1:
        x, w = _gauss_01(m)
        return QuadratureRule(x, w, 2 * m - 1, dim=1)
    # Collapsed coordinates: int_T f = int_0^1 int_0^1 f(x, v(1-x)) (1-x) dv dx.
    # The (1-x) factor is absorbed into a Gauss-Jacobi rule with alpha=1.
    tj, wj = roots_jacobi(m, 1.0, 0.0)
    xs = 0.5 * (tj + 1.0)
    wx = 0.25 * wj
    v, wv = _gauss_01(m)
    X, V = np.meshgrid(xs, v, indexing="ij")
    W = np.outer(wx, wv)
    pts = np.column_stack([X.ravel(), (V * (1.0 - X)).ravel()])
    return QuadratureRule(pts, W.ravel(), 2 * m - 1, dim=2)


def time_quadrature(kind: str, points: int) -> QuadratureRule:
    """Gauss or Gauss-Lobatto rule on the unit time slab [0, 1]."""
    if kind == "gauss":
        if points < 1:
            raise CapabilityError("Gauss rules need at least 1 point")
        x, w = _gauss_01(points)
        return QuadratureRule(x, w, 2 * points - 1, dim=1)
    if kind == "lobatto":
        q = points
        if q < 2:
            raise CapabilityError("Lobatto rules need at least 2 points")
        if q == 2:
            x = np.array([-1.0, 1.0])
        else:
            # Interior nodes are the roots of P'_{q-1}.
            c = np.zeros(q)
            c[-1] = 1.0
            x = np.concatenate([[-1.0], npleg.legroots(npleg.legder(c)), [1.0]])
        pq = npleg.legval(x, np.eye(q)[-1])
        w = 2.0 / (q * (q - 1) * pq**2)
        return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, 2 * q - 3, dim=1)
    raise CapabilityError(f"unknown time quadrature kind {kind!r}")


def simplex_monomial_integral(d: int, exponents) -> float:
    """Closed-form integral of a monomial over the reference simplex."""
    from math import factorial

    a = tuple(int(e) for e in exponents)
    if d == 1:
        return 1.0 / (a[0] + 1)
    num = factorial(a[0]) * factorial(a[1])
    return num / float(factorial(a[0] + a[1] + 2))
