"""Dense re-derivation of the local projection, used as a test oracle.

Polynomials live as exponent dictionaries over the scaled cell variables,
edge restrictions are numpy.polynomial coefficient arrays, and polygon
integrals go through the exact fan formula in helpers. None of the package
assembly code is reused, so agreement with the fast path is meaningful.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import legendre as npl
from numpy.polynomial import polynomial as npp

from helpers import _poly_mul, _poly_pow, exact_polygon_monomial


def gl_indices(d: int) -> list[tuple[int, int]]:
    """Graded-lex multi-indices up to total degree d."""
    return [(k - i, i) for k in range(d + 1) for i in range(k + 1)]


def poly_dx(poly: dict, h: float) -> dict:
    out: dict = {}
    for (a, b), c in poly.items():
        if a:
            out[(a - 1, b)] = out.get((a - 1, b), 0.0) + a * c / h
    return out


def poly_dy(poly: dict, h: float) -> dict:
    out: dict = {}
    for (a, b), c in poly.items():
        if b:
            out[(a, b - 1)] = out.get((a, b - 1), 0.0) + b * c / h
    return out


def poly_lap(poly: dict, h: float, n: int = 1) -> dict:
    for _ in range(n):
        out = poly_dx(poly_dx(poly, h), h)
        for k, c in poly_dy(poly_dy(poly, h), h).items():
            out[k] = out.get(k, 0.0) + c
        poly = out
    return poly


def poly_dir(poly: dict, vec, h: float, n: int = 1) -> dict:
    for _ in range(n):
        out: dict = {}
        for k, c in poly_dx(poly, h).items():
            out[k] = out.get(k, 0.0) + vec[0] * c
        for k, c in poly_dy(poly, h).items():
            out[k] = out.get(k, 0.0) + vec[1] * c
        poly = out
    return poly


def poly_deriv(poly: dict, nu, h: float) -> dict:
    for _ in range(nu[0]):
        poly = poly_dx(poly, h)
    for _ in range(nu[1]):
        poly = poly_dy(poly, h)
    return poly


def poly_eval(poly: dict, pt, center, h: float) -> float:
    xi = (pt[0] - center[0]) / h
    eta = (pt[1] - center[1]) / h
    return sum(c * xi ** a * eta ** b for (a, b), c in poly.items())


def restrict(poly: dict, a_pt, b_pt, center, h: float) -> np.ndarray:
    """Coefficients in s of the polynomial along a_pt + s (b_pt - a_pt)."""
    sx = np.array([(a_pt[0] - center[0]) / h, (b_pt[0] - a_pt[0]) / h])
    sy = np.array([(a_pt[1] - center[1]) / h, (b_pt[1] - a_pt[1]) / h])
    out = np.zeros(1)
    for (a, b), c in poly.items():
        term = c * npp.polymul(npp.polypow(sx, a), npp.polypow(sy, b))
        out = npp.polyadd(out, term)
    return out


def int01(coeffs) -> float:
    return float(npp.polyval(1.0, npp.polyint(coeffs)))


def sh_legendre(k: int) -> np.ndarray:
    return npl.Legendre.basis(k, domain=[0.0, 1.0]).convert(kind=Polynomial).coef


class DictFunction:
    """Smooth-function protocol backed by an exponent dictionary."""

    def __init__(self, poly: dict, center=(0.0, 0.0), h: float = 1.0):
        self.poly = poly
        self.center = np.asarray(center, dtype=float)
        self.h = float(h)

    def __call__(self, points):
        return np.array([poly_eval(self.poly, pt, self.center, self.h)
                         for pt in np.asarray(points)])

    def derivatives(self, points, order: int):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        nus = gl_indices(order)
        out = np.zeros((points.shape[0], len(nus)))
        for col, nu in enumerate(nus):
            d = poly_deriv(self.poly, nu, self.h)
            out[:, col] = [poly_eval(d, pt, self.center, self.h) for pt in points]
        return out


class _Frame:
    def __init__(self, points, k):
        n = len(points)
        i, j = k, (k + 1) % n
        fwd = tuple(points[i]) <= tuple(points[j])
        self.lo, self.hi = (i, j) if fwd else (j, i)
        self.a, self.b = points[self.lo], points[self.hi]
        self.h_e = float(np.hypot(*(self.b - self.a)))
        self.tangent = (self.b - self.a) / self.h_e
        self.normal = np.array([self.tangent[1], -self.tangent[0]])
        self.sign_out = 1.0 if fwd else -1.0


class DenseElementOracle:
    """Projection of a dof vector, rebuilt from the defining conditions.

    The oracle mirrors the mathematical construction only: the form applied
    to polynomial pairs by exact integration, the integration-by-parts
    boundary terms from independently reconstructed edge traces, vertex
    averages, and the boundary pinning form on whatever the averages leave
    free. Standalone cell conventions (lexicographic edge orientation,
    vertex scale equal to the diameter) apply.
    """

    def __init__(self, config, points, layout):
        self.config = config
        self.layout = layout
        points = np.asarray(points, dtype=float)
        self.points = points
        n = len(points)
        diff = points[:, None, :] - points[None, :, :]
        self.h = float(np.sqrt((diff ** 2).sum(axis=2)).max())
        x, y = points[:, 0], points[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        area = 0.5 * float(cross.sum())
        self.center = np.array([((x + xn) * cross).sum() / (6 * area),
                                ((y + yn) * cross).sum() / (6 * area)])
        self.vertex_h = np.full(n, self.h)
        self.frames = [_Frame(points, k) for k in range(n)]
        self.mono = [{nu: 1.0} for nu in gl_indices(config.r)]
        shifted = points - self.center
        self._table = {}
        for deg in range(2 * config.r + 1):
            for a in range(deg + 1):
                b = deg - a
                self._table[(a, b)] = (exact_polygon_monomial(shifted, a, b)
                                       / self.h ** (a + b))
        self._form = None
        self._avg = None
        self._pin_Q = None

    def int_cell(self, poly: dict) -> float:
        return sum(c * self._table[k] for k, c in poly.items())

    # ---------------------------------------------------------- trace data

    def trace(self, chi, e: int, j: int) -> np.ndarray:
        """s-coefficients of the j-th frame-normal derivative along edge e."""
        cfg, fr = self.config, self.frames[e]
        p, r = cfg.p, cfg.r
        ncoeff, nend, nmom = r - j + 1, p - j, r - 2 * p + j + 1
        M = np.zeros((ncoeff, ncoeff))
        rhs = np.zeros(ncoeff)
        for m in range(ncoeff):
            mono = np.zeros(m + 1)
            mono[m] = 1.0
            for k in range(nend):
                d = npp.polyder(mono, k) if k else mono
                M[k, m] = npp.polyval(0.0, d)
                M[nend + k, m] = npp.polyval(1.0, d)
            for i in range(nmom):
                M[2 * nend + i, m] = int01(npp.polymul(sh_legendre(i), mono))
        n_op = {(1, 0): float(fr.normal[0]), (0, 1): float(fr.normal[1])}
        t_op = {(1, 0): float(fr.tangent[0]), (0, 1): float(fr.tangent[1])}
        for vtx, row0 in ((fr.lo, 0), (fr.hi, nend)):
            hv = self.vertex_h[vtx]
            for k in range(nend):
                op = _poly_mul(_poly_pow(n_op, j), _poly_pow(t_op, k))
                val = sum(c * chi[self.layout.vertex_slot(vtx, nu)]
                          / hv ** (nu[0] + nu[1]) for nu, c in op.items())
                rhs[row0 + k] = fr.h_e ** k * val
        for i in range(nmom):
            slot = (self.layout.edge_value_slot(e, i) if j == 0
                    else self.layout.edge_normal_slot(e, j, i))
            scale = self.layout.entries[slot].scale
            rhs[2 * nend + i] = chi[slot] / (scale * fr.h_e)
        return np.linalg.solve(M, rhs)

    def all_traces(self, chi) -> list[list[np.ndarray]]:
        return [[self.trace(chi, e, j) for j in range(self.config.p)]
                for e in range(len(self.frames))]

    def _lap_trace(self, phis, e: int, i: int) -> np.ndarray:
        fr = self.frames[e]
        out = np.zeros(1)
        for k in range(i + 1):
            d = npp.polyder(phis[2 * k], 2 * (i - k)) if i != k else phis[2 * k]
            out = npp.polyadd(out, math.comb(i, k)
                              * fr.h_e ** (-2 * (i - k)) * np.asarray(d))
        return out

    def _dn_lap_trace(self, phis, e: int, i: int) -> np.ndarray:
        fr = self.frames[e]
        out = np.zeros(1)
        for k in range(i + 1):
            d = npp.polyder(phis[2 * k + 1], 2 * (i - k)) if i != k else phis[2 * k + 1]
            out = npp.polyadd(out, math.comb(i, k)
                              * fr.h_e ** (-2 * (i - k)) * np.asarray(d))
        return out

    # ---------------------------------------------------------- form data

    def form_matrix(self) -> np.ndarray:
        """The polyharmonic form on basis monomial pairs, exact integrals."""
        if self._form is not None:
            return self._form
        cfg, h = self.config, self.h
        n_r = len(self.mono)
        Gm = np.zeros((n_r, n_r))
        if cfg.odd:
            grads = [(poly_dx(poly_lap(m, h, cfg.ell), h),
                      poly_dy(poly_lap(m, h, cfg.ell), h)) for m in self.mono]
            for i in range(n_r):
                for j in range(i + 1):
                    v = (self.int_cell(_poly_mul(grads[i][0], grads[j][0]))
                         + self.int_cell(_poly_mul(grads[i][1], grads[j][1])))
                    Gm[i, j] = Gm[j, i] = v
        else:
            laps = [poly_lap(m, h, cfg.ell) for m in self.mono]
            for i in range(n_r):
                for j in range(i + 1):
                    Gm[i, j] = Gm[j, i] = self.int_cell(_poly_mul(laps[i], laps[j]))
        self._form = Gm
        return Gm

    def form_rhs(self, chi, phis_all) -> np.ndarray:
        """The form applied to (virtual v, basis monomial), by parts."""
        cfg, h = self.config, self.h
        pe, ell = cfg.p_eff, cfg.ell
        b = np.zeros(len(self.mono))
        for ai, m in enumerate(self.mono):
            val = 0.0
            for k, c in poly_lap(m, h, pe).items():
                val += c * h ** 2 * chi[self.layout.bulk_slot(k)]
            if cfg.odd:
                val = -val
            for e, fr in enumerate(self.frames):
                phis = phis_all[e]
                n_out = fr.sign_out * fr.normal
                args = (fr.a, fr.b, self.center, h)
                for i in range(1, ell + 1):
                    qd = poly_lap(m, h, pe - i)
                    q_s = restrict(qd, *args)
                    dnq_s = restrict(poly_dir(qd, n_out, h), *args)
                    v_lap = self._lap_trace(phis, e, i - 1)
                    v_dn = fr.sign_out * np.asarray(self._dn_lap_trace(phis, e, i - 1))
                    t1 = int01(npp.polymul(q_s, v_dn))
                    t2 = int01(npp.polymul(dnq_s, v_lap))
                    val += fr.h_e * ((t2 - t1) if cfg.odd else (t1 - t2))
                if cfg.odd:
                    dnq_s = restrict(poly_dir(poly_lap(m, h, ell), n_out, h), *args)
                    val += fr.h_e * int01(
                        npp.polymul(dnq_s, self._lap_trace(phis, e, ell)))
            b[ai] = val
        return b

    # ---------------------------------------------------------- pinning data

    def average_rows(self) -> np.ndarray:
        if self._avg is not None:
            return self._avg
        cfg = self.config
        nus = gl_indices(cfg.p_eff - 1)
        A = np.zeros((len(nus), len(self.mono)))
        for row, nu in enumerate(nus):
            for ai, m in enumerate(self.mono):
                d = poly_deriv(m, nu, self.h)
                A[row, ai] = np.mean([poly_eval(d, pt, self.center, self.h)
                                      for pt in self.points])
        self._avg = A
        return A

    def average_rhs(self, chi) -> np.ndarray:
        cfg = self.config
        nus = gl_indices(cfg.p_eff - 1)
        rho = np.zeros(len(nus))
        for row, nu in enumerate(nus):
            vals = [chi[self.layout.vertex_slot(v, nu)]
                    / self.vertex_h[v] ** (nu[0] + nu[1])
                    for v in range(len(self.points))]
            rho[row] = np.mean(vals)
        return rho

    def _edge_restrictions(self, e: int, j: int) -> list[np.ndarray]:
        fr = self.frames[e]
        return [restrict(poly_dir(m, fr.normal, self.h, j),
                         fr.a, fr.b, self.center, self.h) for m in self.mono]

    def pinning_matrix(self) -> np.ndarray:
        if self._pin_Q is not None:
            return self._pin_Q
        cfg = self.config
        n_r = len(self.mono)
        Q = np.zeros((n_r, n_r))
        for e, fr in enumerate(self.frames):
            for j in range(cfg.p):
                rests = self._edge_restrictions(e, j)
                w = self.h ** (2 * j - 1) * fr.h_e
                for i1 in range(n_r):
                    for i2 in range(i1 + 1):
                        v = w * int01(npp.polymul(rests[i1], rests[i2]))
                        Q[i1, i2] += v
                        if i1 != i2:
                            Q[i2, i1] += v
        self._pin_Q = Q
        return Q

    def pinning_rhs(self, phis_all) -> np.ndarray:
        cfg = self.config
        rp = np.zeros(len(self.mono))
        for e, fr in enumerate(self.frames):
            for j in range(cfg.p):
                rests = self._edge_restrictions(e, j)
                w = self.h ** (2 * j - 1) * fr.h_e
                for i, rest in enumerate(rests):
                    rp[i] += w * int01(npp.polymul(rest, phis_all[e][j]))
        return rp

    # ---------------------------------------------------------- projection

    def project(self, chi) -> np.ndarray:
        """Basis coefficients of the projection of the dof vector chi."""
        chi = np.asarray(chi, dtype=float)
        phis_all = self.all_traces(chi)
        Gm = self.form_matrix()
        b = self.form_rhs(chi, phis_all)
        lam, V = np.linalg.eigh(Gm)
        tol = 1e-10 * max(lam[-1], np.finfo(float).tiny)
        nk = int((lam <= tol).sum())
        V_K, V_R = V[:, :nk], V[:, nk:]
        z = V_R @ ((V_R.T @ b) / lam[nk:])
        if nk == 0:
            return z
        A = self.average_rows()
        A_K = A @ V_K
        U, sv, Vt = np.linalg.svd(A_K)
        rank = int((sv > 1e-10 * sv[0]).sum()) if sv.size else 0
        Nn = Vt[rank:].T
        rows = [A_K]
        rhs = [self.average_rhs(chi) - A @ z]
        if Nn.shape[1] > 0:
            Q = self.pinning_matrix()
            rp = self.pinning_rhs(phis_all)
            rows.append(Nn.T @ (V_K.T @ Q @ V_K))
            rhs.append(Nn.T @ (V_K.T @ (rp - Q @ z)))
        w = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)[0]
        return z + V_K @ w
