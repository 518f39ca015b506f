"""Quadrature on edges and polygons.

Edges use Gauss-Legendre. Polygons are ear-clipped into triangles and
each triangle carries a collapsed (Duffy) Gauss product rule: weights
stay positive at every degree, which matters more here than symmetry
since the element matrices lean on exactness up to degree 2r.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Points (npts, dim) and weights summing to the measure of the domain."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, values: np.ndarray) -> float:
        return float(self.weights @ values)


@dataclass(frozen=True)
class EdgeRule(QuadratureRule):
    """Rule on a segment; ``params`` holds the s in [0,1] node parameters."""

    params: np.ndarray = None


@lru_cache(maxsize=None)
def gauss01(npts: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return tuple((x + 1.0) / 2.0), tuple(w / 2.0)


def edge_rule(a: np.ndarray, b: np.ndarray, degree: int) -> EdgeRule:
    """Gauss rule on the segment a -> b, exact for polynomials of ``degree``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    npts = max(1, (degree + 2) // 2)
    s, w = gauss01(npts)
    s = np.asarray(s)
    w = np.asarray(w)
    length = float(np.hypot(*(b - a)))
    points = a[None, :] + s[:, None] * (b - a)[None, :]
    return EdgeRule(points=points, weights=w * length, degree=degree, params=s)


def _triangle_rule_local(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Duffy rule on the reference triangle (0,0),(1,0),(0,1), weight sum 1/2."""
    npts = max(1, (degree + 2) // 2 + 1)
    g, w = gauss01(npts)
    g = np.asarray(g)
    w = np.asarray(w)
    u = np.repeat(g, npts)
    v = np.tile(g, npts) * (1.0 - u)
    wt = np.repeat(w * (1.0 - g), npts) * np.tile(w, npts)
    return np.column_stack([u, v]), wt


def triangle_rule(v0, v1, v2, degree: int) -> QuadratureRule:
    v0, v1, v2 = (np.asarray(v, dtype=float) for v in (v0, v1, v2))
    loc, wt = _triangle_rule_local(degree)
    jac = (v1[0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (v1[1] - v0[1])
    points = v0[None, :] + loc[:, 0:1] * (v1 - v0)[None, :] + loc[:, 1:2] * (v2 - v0)[None, :]
    return QuadratureRule(points=points, weights=wt * jac, degree=degree)


def _signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_properly_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 != 0 and d3 * d4 != 0


def validate_simple_polygon(vertices: np.ndarray, label: str = "polygon") -> None:
    """Raise QuadratureError unless vertices describe a simple CCW polygon."""
    v = np.asarray(vertices, dtype=float)
    n = v.shape[0]
    if n < 3:
        raise QuadratureError(f"{label}: needs at least 3 vertices, got {n}")
    for i in range(n):
        if np.all(v[i] == v[(i + 1) % n]):
            raise QuadratureError(f"{label}: repeated consecutive vertex at position {i}")
    area = _signed_area(v)
    if area <= 0.0:
        raise QuadratureError(f"{label}: signed area {area:.3e} is not positive (vertices must be CCW)")
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_properly_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                raise QuadratureError(f"{label}: edges {i} and {j} intersect (polygon is self-intersecting)")


def triangulate(vertices: np.ndarray) -> list[tuple[int, int, int]]:
    """Ear-clipping triangulation of a simple CCW polygon; returns index triples."""
    v = np.asarray(vertices, dtype=float)
    n = v.shape[0]
    idx = list(range(n))
    tris: list[tuple[int, int, int]] = []
    scale = max(np.ptp(v[:, 0]), np.ptp(v[:, 1]))
    eps = 1e-14 * scale * scale

    def cross(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def inside(pt, a, b, c):
        return (cross(a, b, pt) >= -eps and cross(b, c, pt) >= -eps
                and cross(c, a, pt) >= -eps)

    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 4 * n * n:
            raise QuadratureError("ear clipping failed to make progress")
        m = len(idx)
        clipped = False
        for k in range(m):
            i0, i1, i2 = idx[(k - 1) % m], idx[k], idx[(k + 1) % m]
            c = cross(v[i0], v[i1], v[i2])
            if c < -eps:
                continue  # reflex corner, not an ear
            if c <= eps:
                # collinear corner: drop the vertex, it spans no area
                idx.pop(k)
                clipped = True
                break
            ok = True
            for other in idx:
                if other in (i0, i1, i2):
                    continue
                if inside(v[other], v[i0], v[i1], v[i2]):
                    ok = False
                    break
            if ok:
                tris.append((i0, i1, i2))
                idx.pop(k)
                clipped = True
                break
        if not clipped:
            raise QuadratureError("ear clipping found no ear (is the polygon simple?)")
    if len(idx) == 3:
        tris.append(tuple(idx))
    return tris


def polygon_rule(vertices: np.ndarray, degree: int) -> QuadratureRule:
    """Quadrature over a simple CCW polygon, exact to ``degree``."""
    v = np.asarray(vertices, dtype=float)
    validate_simple_polygon(v)
    pts = []
    wts = []
    for (i, j, k) in triangulate(v):
        rule = triangle_rule(v[i], v[j], v[k], degree)
        pts.append(rule.points)
        wts.append(rule.weights)
    return QuadratureRule(points=np.vstack(pts), weights=np.concatenate(wts), degree=degree)
