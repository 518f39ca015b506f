"""Shared fixtures and independent oracles for the test suite.

The integration oracle here deliberately avoids the package quadrature
path: monomials are integrated over triangles through the factorial
formula on the reference simplex, and polygons are fanned from their
first vertex (all oracle shapes are convex).
"""

from __future__ import annotations

import math

import numpy as np

UNIT_SQUARE = np.array([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])

HEXAGON = np.array([(np.cos(k * np.pi / 3), np.sin(k * np.pi / 3)) for k in range(6)])

PENTAGON = np.array([(0.0, 0.0), (1.1, -0.1), (1.6, 0.7), (0.9, 1.3), (-0.2, 0.8)])

SHAPES = {"square": UNIT_SQUARE, "hexagon": HEXAGON, "pentagon": PENTAGON}


def _poly_mul(p: dict, q: dict) -> dict:
    out: dict = {}
    for (a1, b1), c1 in p.items():
        for (a2, b2), c2 in q.items():
            key = (a1 + a2, b1 + b2)
            out[key] = out.get(key, 0.0) + c1 * c2
    return out


def _poly_pow(p: dict, k: int) -> dict:
    out = {(0, 0): 1.0}
    for _ in range(k):
        out = _poly_mul(out, p)
    return out


def exact_triangle_monomial(v0, v1, v2, a: int, b: int) -> float:
    """Integral of x^a y^b over the triangle (v0, v1, v2), exact formula."""
    v0, v1, v2 = (np.asarray(v, dtype=float) for v in (v0, v1, v2))
    jac = (v1[0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (v1[1] - v0[1])
    # x = x0 + u (x1-x0) + w (x2-x0), represented over the (u, w) monomials
    x = {(0, 0): v0[0], (1, 0): v1[0] - v0[0], (0, 1): v2[0] - v0[0]}
    y = {(0, 0): v0[1], (1, 0): v1[1] - v0[1], (0, 1): v2[1] - v0[1]}
    integrand = _poly_mul(_poly_pow(x, a), _poly_pow(y, b))
    total = 0.0
    for (i, j), c in integrand.items():
        total += c * math.factorial(i) * math.factorial(j) / math.factorial(i + j + 2)
    return jac * total


def exact_polygon_monomial(vertices, a: int, b: int) -> float:
    """Integral of x^a y^b over a convex CCW polygon (fan triangulation)."""
    v = np.asarray(vertices, dtype=float)
    return sum(exact_triangle_monomial(v[0], v[i], v[i + 1], a, b)
               for i in range(1, v.shape[0] - 1))
