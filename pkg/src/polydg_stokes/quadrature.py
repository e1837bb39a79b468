"""Gauss rules on the reference segment and the reference triangle.

The triangle rule is the collapsed (Duffy) product of a Gauss-Jacobi rule
with weight ``(1 - s)`` and a Gauss-Legendre rule, so it exists for any
order and all weights are positive.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    """Reference points and weights together with the exactness order."""

    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def n_points(self) -> int:
        return len(self.weights)


def _n_gauss(order: int) -> int:
    # n Gauss points integrate degree 2n - 1 exactly
    return max(1, (order + 2) // 2)


@lru_cache(maxsize=None)
def line_rule(order: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1], exact for polynomials of degree ``order``."""
    n = _n_gauss(order)
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, order)


@lru_cache(maxsize=None)
def triangle_rule(order: int) -> QuadratureRule:
    """Collapsed Gauss rule on the triangle (0,0), (1,0), (0,1).

    Weights sum to 1/2, the reference area.
    """
    n = _n_gauss(order)
    # s is the collapsed direction: the (1 - s) Jacobian goes into the weight
    s, ws = roots_jacobi(n, 1.0, 0.0)
    r, wr = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (s + 1.0)
    ws = ws / 4.0
    r = 0.5 * (r + 1.0)
    wr = 0.5 * wr
    S, R = np.meshgrid(s, r, indexing="ij")
    x = R * (1.0 - S)
    y = S
    w = np.outer(ws, wr)
    pts = np.column_stack([x.ravel(), y.ravel()])
    return QuadratureRule(pts, w.ravel(), order)


def map_triangle(rule: QuadratureRule, tri: np.ndarray):
    """Map a reference triangle rule onto the physical triangle ``tri`` (3x2).

    Returns physical points (n, 2) and weights (n,); a clockwise triangle
    gets negative weights, which callers are expected to reject.
    """
    a, b, c = tri
    J = np.column_stack([b - a, c - a])
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    pts = a + rule.points @ J.T
    return pts, rule.weights * det


def map_segment(rule: QuadratureRule, a: np.ndarray, b: np.ndarray):
    length = float(np.hypot(*(b - a)))
    pts = a + np.outer(rule.points, b - a)
    return pts, rule.weights * length
