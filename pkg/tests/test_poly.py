from __future__ import annotations

import numpy as np
import pytest

from polyvem.poly import (
    EdgePoly,
    Poly2,
    ScaledMonomialBasis,
    directional_derivative,
    edge_moment_basis,
    frame_coefficients,
    inverse_directional_map,
    laplacian_power,
    mi_position,
    multi_indices,
    space_dim,
)


def test_multi_index_ordering():
    assert multi_indices(2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    for i, nu in enumerate(multi_indices(6)):
        assert mi_position(nu) == i
    assert space_dim(3) == 10
    assert space_dim(-1) == 0


def test_laplacian_of_x2y2():
    f = Poly2.from_dict({(2, 2): 1.0})
    lap = f.laplacian()
    pts = np.array([[0.3, -0.7], [1.2, 0.4]])
    expect = 2 * pts[:, 1] ** 2 + 2 * pts[:, 0] ** 2
    assert np.allclose(lap.eval(pts), expect, atol=1e-13)
    lap2 = laplacian_power(f, 2)
    assert np.allclose(lap2.eval(pts), 8.0, atol=1e-13)


def test_triharmonic_bubble_against_sympy():
    sympy = pytest.importorskip("sympy")
    x, y = sympy.symbols("x y")
    bubble = (x * (1 - x) * y * (1 - y)) ** 3
    expr = bubble
    for _ in range(3):
        expr = sympy.diff(expr, x, 2) + sympy.diff(expr, y, 2)
    oracle = sympy.lambdify((x, y), sympy.expand(expr), "numpy")

    b1 = Poly2.from_dict({(1, 0): 1.0, (2, 0): -1.0})
    b2 = Poly2.from_dict({(0, 1): 1.0, (0, 2): -1.0})
    u = b1 * b2
    u = u * u * u
    got = laplacian_power(u, 3)
    pts = np.random.default_rng(7).uniform(0, 1, size=(40, 2))
    want = oracle(pts[:, 0], pts[:, 1])
    assert np.allclose(got.eval(pts), want, rtol=1e-11, atol=1e-9)


def test_scaled_basis_derivative_table():
    basis = ScaledMonomialBasis((0.5, 0.25), 2.0, 3)
    pts = np.array([[0.1, 0.9], [-0.3, 0.2], [0.7, 0.7]])
    # d/dx of ((x-cx)/h)^2 ((y-cy)/h) is 2 (x-cx)/h^2 * (y-cy)/h
    tab = basis.derivative_table(pts, (1, 0))
    i = mi_position((2, 1))
    want = 2 * (pts[:, 0] - 0.5) / 4.0 * (pts[:, 1] - 0.25) / 2.0
    assert np.allclose(tab[i], want, atol=1e-14)


def test_product_rule_identity_random_polys():
    # Lap(f g) = f Lap(g) + 2 grad(f).grad(g) + g Lap(f), random coefficients
    rng = np.random.default_rng(42)
    basis = ScaledMonomialBasis((0.2, -0.1), 1.5, 3)
    pts = rng.uniform(-1, 1, size=(25, 2))
    for _ in range(20):
        f = Poly2(basis, rng.standard_normal(basis.size))
        g = Poly2(basis, rng.standard_normal(basis.size))
        lhs = (f * g).laplacian().eval(pts)
        rhs = (f * g.laplacian()).eval(pts) + (g * f.laplacian()).eval(pts) \
            + 2 * (f.dx() * g.dx()).eval(pts) + 2 * (f.dy() * g.dy()).eval(pts)
        scale = max(1.0, np.abs(lhs).max())
        assert np.allclose(lhs, rhs, atol=1e-12 * scale)


def test_directional_second_derivative_diagonal():
    f = Poly2.from_dict({(2, 0): 1.0, (1, 1): 1.0, (0, 2): 2.0, (3, 0): 0.5})
    pt = np.array([[0.4, -0.2]])
    table = f.eval_derivatives(pt, 2)[:, 0]
    n = np.array([np.sqrt(0.5), np.sqrt(0.5)])
    tau = np.array([-np.sqrt(0.5), np.sqrt(0.5)])
    dnn = directional_derivative(table, n, tau, 2, 0)
    fxx = table[mi_position((2, 0))]
    fxy = table[mi_position((1, 1))]
    fyy = table[mi_position((0, 2))]
    assert np.isclose(dnn, 0.5 * (fxx + 2 * fxy + fyy), atol=1e-13)
    # mixed frame derivative with n=(0,1), tau=(-1,0) picks out -f_xy
    dnt = directional_derivative(table, np.array([0.0, 1.0]), np.array([-1.0, 0.0]), 1, 1)
    assert np.isclose(dnt, -fxy, atol=1e-13)


def test_frame_coefficients_sum():
    coeffs = frame_coefficients(np.array([0.6, 0.8]), np.array([-0.8, 0.6]), 2, 1)
    assert all(a + b == 3 for (a, b) in coeffs)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_inverse_directional_map_roundtrip(m):
    rng = np.random.default_rng(m)
    for _ in range(10):
        theta = rng.uniform(0, 2 * np.pi)
        n = np.array([np.cos(theta), np.sin(theta)])
        tau = np.array([-np.sin(theta), np.cos(theta)])
        fwd, inv = inverse_directional_map(n, tau, m)
        assert np.allclose(fwd @ inv, np.eye(m + 1), atol=1e-13)
        assert np.allclose(inv @ fwd, np.eye(m + 1), atol=1e-13)


def test_inverse_directional_map_axis_frame_is_identity():
    fwd, inv = inverse_directional_map(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 1)
    assert np.allclose(fwd, np.eye(2))
    assert np.allclose(inv, np.eye(2))


def test_restrict_to_edge_quadratic():
    f = Poly2.from_dict({(2, 0): 1.0})
    edge = f.restrict_to_edge(np.array([0.0, 0.0]), np.array([2.0, 0.0]))
    s = np.linspace(0, 1, 7)
    assert np.allclose(edge.eval(s), 4 * s ** 2, atol=1e-13)


def test_restrict_matches_pointwise_on_slanted_edge():
    rng = np.random.default_rng(3)
    basis = ScaledMonomialBasis((0.3, 0.6), 0.8, 4)
    f = Poly2(basis, rng.standard_normal(basis.size))
    a, b = np.array([0.1, -0.4]), np.array([0.9, 0.7])
    edge = f.restrict_to_edge(a, b)
    s = np.linspace(0, 1, 9)
    pts = a[None, :] + s[:, None] * (b - a)[None, :]
    assert np.allclose(edge.eval(s), f.eval(pts), atol=1e-12)


def test_edge_poly_derivative():
    p = EdgePoly(np.array([1.0, 2.0, 3.0]))  # 1 + 2s + 3s^2
    d = p.deriv()
    assert np.allclose(d.coeffs, [2.0, 6.0])
    assert np.allclose(p.deriv(3).coeffs, [0.0])


def test_edge_moment_basis_orthogonality():
    from polyvem.quad import gauss01
    basis = edge_moment_basis(5)
    s, w = (np.asarray(v) for v in gauss01(6))
    for j in range(5):
        for k in range(5):
            val = float(np.sum(w * basis[j].eval(s) * basis[k].eval(s)))
            want = 1.0 / (2 * k + 1) if j == k else 0.0
            assert np.isclose(val, want, atol=1e-13)


def test_eval_derivatives_table_order():
    f = Poly2.from_dict({(3, 1): 2.0})
    pt = np.array([[1.5, 0.5]])
    table = f.eval_derivatives(pt, 4)[:, 0]
    # D^(2,1) of 2 x^3 y = 12 x
    assert np.isclose(table[mi_position((2, 1))], 12 * 1.5, atol=1e-12)
    # D^(3,1) = 12
    assert np.isclose(table[mi_position((3, 1))], 12.0, atol=1e-12)
    assert np.isclose(table[mi_position((0, 4))], 0.0)
