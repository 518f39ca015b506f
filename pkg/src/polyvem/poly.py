"""Bivariate polynomial arithmetic over scaled monomial bases.

Everything downstream (projectors, element matrices, manufactured
solutions) manipulates polynomials through this module, so the
conventions are fixed here once:

* multi-indices are ordered graded-lexicographically,
  (0,0), (1,0), (0,1), (2,0), (1,1), (0,2), ...
* a scaled monomial attached to a cell with centroid ``c`` and diameter
  ``h`` is ``((x - cx)/h)**a * ((y - cy)/h)**b``
* edge-restricted polynomials live on the unit parameter ``s in [0,1]``
  measured along the oriented edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


def multi_indices(degree: int) -> list[tuple[int, int]]:
    """All 2D multi-indices with |nu| <= degree, graded-lex order."""
    return [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]


def mi_position(nu: tuple[int, int]) -> int:
    """Position of a multi-index in the graded-lex ordering."""
    d = nu[0] + nu[1]
    return d * (d + 1) // 2 + nu[1]


def space_dim(degree: int) -> int:
    """dim P_degree(R^2); zero for negative degree (empty space)."""
    if degree < 0:
        return 0
    return (degree + 1) * (degree + 2) // 2


@dataclass(frozen=True)
class ScaledMonomialBasis:
    """Monomial basis ((x-cx)/h)^a ((y-cy)/h)^b up to a fixed degree."""

    center: tuple[float, float]
    h: float
    degree: int

    @property
    def size(self) -> int:
        return space_dim(self.degree)

    def indices(self) -> list[tuple[int, int]]:
        return multi_indices(self.degree)

    def local_coords(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        return (pts[:, 0] - self.center[0]) / self.h, (pts[:, 1] - self.center[1]) / self.h

    def eval_table(self, points: np.ndarray) -> np.ndarray:
        """Values of every basis monomial at ``points``; shape (size, npts)."""
        x, y = self.local_coords(points)
        xp = np.ones((self.degree + 1, x.size))
        yp = np.ones((self.degree + 1, y.size))
        for k in range(1, self.degree + 1):
            xp[k] = xp[k - 1] * x
            yp[k] = yp[k - 1] * y
        table = np.empty((self.size, x.size))
        for i, (a, b) in enumerate(self.indices()):
            table[i] = xp[a] * yp[b]
        return table

    def diff_operator(self, nu: tuple[int, int]) -> np.ndarray:
        """Matrix sending coefficients of f to coefficients of D^nu f."""
        op = np.eye(self.size)
        for _ in range(nu[0]):
            op = self._d1(0) @ op
        for _ in range(nu[1]):
            op = self._d1(1) @ op
        return op

    def _d1(self, axis: int) -> np.ndarray:
        mat = np.zeros((self.size, self.size))
        for i, (a, b) in enumerate(self.indices()):
            k = a if axis == 0 else b
            if k == 0:
                continue
            tgt = (a - 1, b) if axis == 0 else (a, b - 1)
            mat[mi_position(tgt), i] = k / self.h
        return mat

    def derivative_table(self, points: np.ndarray, nu: tuple[int, int]) -> np.ndarray:
        """Values of D^nu applied to every basis monomial; shape (size, npts)."""
        return self.diff_operator(nu).T @ self.eval_table(points)


class Poly2:
    """Polynomial in two variables, stored as coefficients over a basis."""

    def __init__(self, basis: ScaledMonomialBasis, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (basis.size,):
            raise ValueError(f"expected {basis.size} coefficients, got {coeffs.shape}")
        self.basis = basis
        self.coeffs = coeffs

    @classmethod
    def zero(cls, basis: ScaledMonomialBasis) -> "Poly2":
        return cls(basis, np.zeros(basis.size))

    @classmethod
    def monomial(cls, basis: ScaledMonomialBasis, nu: tuple[int, int]) -> "Poly2":
        c = np.zeros(basis.size)
        c[mi_position(nu)] = 1.0
        return cls(basis, c)

    @classmethod
    def from_dict(cls, entries: dict[tuple[int, int], float],
                  center: tuple[float, float] = (0.0, 0.0), h: float = 1.0) -> "Poly2":
        degree = max((a + b for a, b in entries), default=0)
        basis = ScaledMonomialBasis(center, h, degree)
        poly = cls.zero(basis)
        for nu, val in entries.items():
            poly.coeffs[mi_position(nu)] += val
        return poly

    def _check_compatible(self, other: "Poly2") -> None:
        if self.basis.center != other.basis.center or self.basis.h != other.basis.h:
            raise ValueError("polynomials use different centers or scales")

    def with_degree(self, degree: int) -> "Poly2":
        """Pad (or truncate, if the tail is zero) to a basis of given degree."""
        new = ScaledMonomialBasis(self.basis.center, self.basis.h, degree)
        out = np.zeros(new.size)
        n = min(new.size, self.basis.size)
        if not np.allclose(self.coeffs[n:], 0.0, atol=0.0):
            raise ValueError("truncation would drop nonzero coefficients")
        out[:n] = self.coeffs[:n]
        return Poly2(new, out)

    def __add__(self, other: "Poly2") -> "Poly2":
        self._check_compatible(other)
        d = max(self.basis.degree, other.basis.degree)
        a, b = self.with_degree(d), other.with_degree(d)
        return Poly2(a.basis, a.coeffs + b.coeffs)

    def __sub__(self, other: "Poly2") -> "Poly2":
        return self + (other * -1.0)

    def __mul__(self, other):
        if isinstance(other, Poly2):
            self._check_compatible(other)
            d = self.basis.degree + other.basis.degree
            basis = ScaledMonomialBasis(self.basis.center, self.basis.h, d)
            coeffs = np.zeros(basis.size)
            mine = self.basis.indices()
            theirs = other.basis.indices()
            for i, (a1, b1) in enumerate(mine):
                ci = self.coeffs[i]
                if ci == 0.0:
                    continue
                for j, (a2, b2) in enumerate(theirs):
                    cj = other.coeffs[j]
                    if cj == 0.0:
                        continue
                    coeffs[mi_position((a1 + a2, b1 + b2))] += ci * cj
            return Poly2(basis, coeffs)
        return Poly2(self.basis, self.coeffs * float(other))

    __rmul__ = __mul__

    def dx(self) -> "Poly2":
        return Poly2(self.basis, self.basis.diff_operator((1, 0)) @ self.coeffs)

    def dy(self) -> "Poly2":
        return Poly2(self.basis, self.basis.diff_operator((0, 1)) @ self.coeffs)

    def derivative(self, nu: tuple[int, int]) -> "Poly2":
        return Poly2(self.basis, self.basis.diff_operator(nu) @ self.coeffs)

    def laplacian(self) -> "Poly2":
        op = self.basis.diff_operator((2, 0)) + self.basis.diff_operator((0, 2))
        return Poly2(self.basis, op @ self.coeffs)

    def eval(self, points: np.ndarray) -> np.ndarray:
        return self.basis.eval_table(points).T @ self.coeffs

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.eval(points)

    def eval_derivatives(self, points: np.ndarray, order: int) -> np.ndarray:
        """Table of D^nu f at points for all |nu| <= order, graded-lex rows."""
        table = self.basis.eval_table(points)
        rows = [self.basis.diff_operator(nu) @ self.coeffs for nu in multi_indices(order)]
        return np.asarray(rows) @ table

    def actual_degree(self, tol: float = 0.0) -> int:
        deg = -1
        for i, (a, b) in enumerate(self.basis.indices()):
            if abs(self.coeffs[i]) > tol:
                deg = max(deg, a + b)
        return deg

    def restrict_to_edge(self, a: np.ndarray, b: np.ndarray) -> "EdgePoly":
        """Restriction to the segment a -> b as a polynomial in s in [0,1]."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        x0 = (a[0] - self.basis.center[0]) / self.basis.h
        x1 = (b[0] - a[0]) / self.basis.h
        y0 = (a[1] - self.basis.center[1]) / self.basis.h
        y1 = (b[1] - a[1]) / self.basis.h
        out = np.zeros(self.basis.degree + 1)
        xpow = [np.array([1.0])]
        ypow = [np.array([1.0])]
        for _ in range(self.basis.degree):
            xpow.append(np.convolve(xpow[-1], [x0, x1]))
            ypow.append(np.convolve(ypow[-1], [y0, y1]))
        for i, (p, q) in enumerate(self.basis.indices()):
            c = self.coeffs[i]
            if c == 0.0:
                continue
            term = np.convolve(xpow[p], ypow[q]) * c
            out[: term.size] += term
        return EdgePoly(out)


def laplacian_power(f: Poly2, k: int) -> Poly2:
    """Apply the Laplacian k times."""
    out = f
    for _ in range(k):
        out = out.laplacian()
    return out


class EdgePoly:
    """Univariate polynomial in the edge parameter s, monomial coefficients."""

    def __init__(self, coeffs: np.ndarray):
        self.coeffs = np.asarray(coeffs, dtype=float)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def eval(self, s: np.ndarray) -> np.ndarray:
        return np.polynomial.polynomial.polyval(np.asarray(s, dtype=float), self.coeffs)

    __call__ = eval

    def deriv(self, k: int = 1) -> "EdgePoly":
        c = self.coeffs
        for _ in range(k):
            c = c[1:] * np.arange(1, c.size) if c.size > 1 else np.zeros(1)
        return EdgePoly(c)


def sderiv_operator(ncoeff: int, k: int) -> np.ndarray:
    """Matrix form of (d/ds)^k on monomial coefficient vectors of length ncoeff."""
    op = np.eye(ncoeff)
    for _ in range(k):
        n = op.shape[0]
        d = np.zeros((max(n - 1, 1), n))
        for m in range(1, n):
            d[m - 1, m] = m
        op = d @ op
    return op


def frame_coefficients(n: np.ndarray, tau: np.ndarray, a: int, b: int) -> dict[tuple[int, int], float]:
    """Cartesian expansion of (n.grad)^a (tau.grad)^b.

    Returns {nu: c_nu} with |nu| = a + b such that the frame derivative
    equals sum c_nu D^nu. Valid for constant frames, which is all we need
    on straight edges.
    """
    coeffs: dict[tuple[int, int], float] = {}
    for i in range(a + 1):
        cn = math.comb(a, i) * n[0] ** (a - i) * n[1] ** i
        for j in range(b + 1):
            ct = math.comb(b, j) * tau[0] ** (b - j) * tau[1] ** j
            nu = (a - i + b - j, i + j)
            coeffs[nu] = coeffs.get(nu, 0.0) + cn * ct
    return coeffs


def directional_derivative(deriv_table: np.ndarray, n: np.ndarray, tau: np.ndarray,
                           a: int, b: int) -> np.ndarray:
    """(n.grad)^a (tau.grad)^b f from a graded-lex table of D^nu f values."""
    out = 0.0
    for nu, c in frame_coefficients(n, tau, a, b).items():
        out = out + c * deriv_table[mi_position(nu)]
    return out


def frame_map(n: np.ndarray, tau: np.ndarray, m: int) -> np.ndarray:
    """Matrix sending order-m Cartesian derivatives to frame derivatives.

    Input vector is (D^(m,0), D^(m-1,1), ..., D^(0,m)); output row i is
    the frame derivative with m - i normal and i tangential applications.
    """
    fwd = np.zeros((m + 1, m + 1))
    for i in range(m + 1):
        for nu, c in frame_coefficients(n, tau, m - i, i).items():
            fwd[i, nu[1]] = c
    return fwd


def inverse_directional_map(n: np.ndarray, tau: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Forward and inverse maps between Cartesian and frame derivatives of order m."""
    fwd = frame_map(n, tau, m)
    return fwd, np.linalg.inv(fwd)


@lru_cache(maxsize=None)
def shifted_legendre_coeffs(k: int) -> tuple[float, ...]:
    """Monomial coefficients of the Legendre polynomial mapped to [0, 1]."""
    if k == 0:
        return (1.0,)
    if k == 1:
        return (-1.0, 2.0)
    pm1 = np.asarray(shifted_legendre_coeffs(k - 1))
    pm2 = np.asarray(shifted_legendre_coeffs(k - 2))
    # (2s - 1) * P_{k-1}
    t = np.zeros(k + 1)
    t[1:] += 2.0 * pm1
    t[:-1] -= pm1
    out = ((2 * k - 1) * t) / k
    out[: pm2.size] -= (k - 1) / k * pm2
    return tuple(out)


def edge_moment_basis(count: int) -> list[EdgePoly]:
    """The first ``count`` shifted Legendre polynomials as edge polynomials."""
    return [EdgePoly(np.asarray(shifted_legendre_coeffs(k))) for k in range(count)]
