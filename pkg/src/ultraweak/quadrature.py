"""Quadrature on the reference triangle and the unit segment.

The reference triangle has vertices (0, 0), (1, 0), (0, 1); rules are given
in reference coordinates with weights summing to its area 1/2.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import sqrt

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 12


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Points, weights and the polynomial degree integrated exactly."""

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, f) -> float:
        """Integrate ``f(x, y)`` over the reference triangle."""
        x, y = self.points.T
        return float(np.dot(self.weights, f(x, y)))


def _centroid_rule() -> QuadratureRule:
    return QuadratureRule(np.array([[1 / 3, 1 / 3]]), np.array([0.5]), 1)


def _three_point_rule() -> QuadratureRule:
    pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
    return QuadratureRule(pts, np.full(3, 1 / 6), 2)


def _radon_rule() -> QuadratureRule:
    # 7-point degree-5 rule, closed form
    s = sqrt(15.0)
    a1, b1 = (6 - s) / 21, (9 + 2 * s) / 21
    a2, b2 = (6 + s) / 21, (9 - 2 * s) / 21
    w1, w2 = (155 - s) / 2400, (155 + s) / 2400
    pts = np.array(
        [
            [1 / 3, 1 / 3],
            [a1, a1], [b1, a1], [a1, b1],
            [a2, a2], [b2, a2], [a2, b2],
        ]
    )
    w = np.array([9 / 80, w1, w1, w1, w2, w2, w2])
    return QuadratureRule(pts, w, 5)


def collapsed_gauss_rule(degree: int) -> QuadratureRule:
    """Conical product rule: Gauss-Legendre times Gauss-Jacobi(1, 0).

    Exact for total degree ``degree``; usable for any degree, which makes
    it a convenient high-order oracle as well.
    """
    m = degree // 2 + 1
    s, ws = np.polynomial.legendre.leggauss(m)
    t, wt = roots_jacobi(m, 1.0, 0.0)
    xi, wxi = (1 + s) / 2, ws / 2
    eta, weta = (1 + t) / 2, wt / 4
    X = np.outer(1 - eta, xi)
    Y = np.repeat(eta[:, None], m, axis=1)
    W = np.outer(weta, wxi)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return QuadratureRule(pts, W.ravel(), 2 * m - 1)


@lru_cache(maxsize=None)
def simplex_rule(degree: int) -> QuadratureRule:
    """Return a rule on the reference triangle exact to at least ``degree``.

    Parameters
    ----------
    degree : int
        Required polynomial exactness, ``1 <= degree <= 12``.
    """
    if not isinstance(degree, (int, np.integer)) or not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree!r} (1..{MAX_DEGREE})")
    if degree == 1:
        return _centroid_rule()
    if degree == 2:
        return _three_point_rule()
    if degree <= 5:
        return _radon_rule()
    return collapsed_gauss_rule(int(degree))


@lru_cache(maxsize=None)
def segment_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1], exact to ``degree``."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    m = degree // 2 + 1
    s, w = np.polynomial.legendre.leggauss(m)
    return (1 + s) / 2, w / 2


def reference_monomial_integral(a: int, b: int) -> float:
    """Exact integral of x**a * y**b over the reference triangle."""
    from math import factorial

    return factorial(a) * factorial(b) / factorial(a + b + 2)
