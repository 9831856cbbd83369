from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqfem import polyquad as pq

REF = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])


def beta_integral(a, b):
    """int over the reference triangle of x^a y^b."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


class TestQuadrature:
    def test_area(self):
        assert np.isclose(pq.quad_tri(1).weights.sum(), 0.5)

    def test_edge_monomial(self):
        r = pq.quad_edge(3)
        assert np.isclose(r.weights @ r.points**2, 2.0 / 3.0)

    def test_x5y5(self):
        r = pq.quad_tri(10)
        x, y = r.points[:, 1], r.points[:, 2]
        # 5! 5! / 12! = 1/33264
        assert beta_integral(5, 5) == 1.0 / 33264.0
        assert abs(r.weights @ (x**5 * y**5) - 1.0 / 33264.0) < 1e-17

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, pq.MAX_DEGREE), st.data())
    def test_triangle_exactness(self, degree, data):
        a = data.draw(st.integers(0, degree))
        b = degree - a
        r = pq.quad_tri(degree)
        x, y = r.points[:, 1], r.points[:, 2]
        exact = beta_integral(a, b)
        assert abs(r.weights @ (x**a * y**b) - exact) <= 1e-13 * max(exact, 1e-300) + 1e-17

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, pq.MAX_DEGREE))
    def test_edge_exactness(self, degree):
        r = pq.quad_edge(degree)
        exact = 0.0 if degree % 2 else 2.0 / (degree + 1)
        assert abs(r.weights @ r.points**degree - exact) < 1e-14

    def test_points_strictly_inside(self):
        r = pq.quad_tri(20)
        assert np.all(r.points > 0)

    def test_degree_limit(self):
        with pytest.raises(ValueError):
            pq.quad_tri(pq.MAX_DEGREE + 1)
        with pytest.raises(ValueError):
            pq.quad_edge(-1)

    def test_graded_rule_singular_integrand(self):
        # int_K r^beta over the reference triangle, singular vertex at the origin
        bary, w = pq.graded_vertex_rule()
        x, y = bary[:, 1], bary[:, 2]
        beta = -1.8   # r^beta with beta > -2 is integrable
        t = np.linspace(0, np.pi / 2, 20001)
        R = 1.0 / (np.cos(t) + np.sin(t))
        ref = np.trapezoid(R ** (beta + 2) / (beta + 2), t)
        assert np.isclose(w.sum(), 0.5)
        assert abs(w @ np.hypot(x, y) ** beta - ref) / ref < 1e-6


class TestLegendre:
    def test_values(self):
        assert pq.legendre_edge_eval(0, [0, 0], [1, 0], [0.3, 0.0]) == 1.0
        s, e = np.array([0.0, 0.0]), np.array([2.0, 1.0])
        assert np.isclose(pq.legendre_edge_eval(1, s, e, (s + e) / 2), 0.0)
        assert np.isclose(pq.legendre_edge_eval(1, s, e, e), 1.0)
        assert np.isclose(pq.legendre_edge_eval(1, s, e, s), -1.0)
        assert np.isclose(pq.legendre_edge_eval(2, s, e, (s + e) / 2), -0.5)

    def test_off_edge(self):
        with pytest.raises(ValueError):
            pq.legendre_edge_eval(1, [0, 0], [1, 0], [0.5, 0.1])

    def test_norms(self):
        assert np.isclose(pq.edge_norm_sq(0, 1.0), 1.0)
        assert np.isclose(pq.edge_norm_sq(1, 2.0), 2.0 / 3.0)
        for j in range(6):
            v = pq.edge_norm_sq(j, 0.7)
            assert 0 < v <= 0.7

    @pytest.mark.parametrize("k", [1, 3])
    def test_gram_orthogonality(self, k):
        h = 0.37
        r = pq.quad_edge(2 * k)
        L = pq.legendre_table(k, r.points)
        G = 0.5 * h * np.einsum("q,qi,qj->ij", r.weights, L, L)
        expected = np.diag([h / (2 * j + 1) for j in range(k + 1)])
        np.testing.assert_allclose(G, expected, rtol=1e-12, atol=1e-15)

    def test_parity(self):
        s = pq.quad_edge(10).points
        for j in range(6):
            np.testing.assert_allclose(pq.legendre(j, -s), (-1) ** j * pq.legendre(j, s), atol=1e-14)

    def test_derivative_table(self):
        s = np.linspace(-1, 1, 7)
        d = pq.legendre_deriv_table(3, s)
        np.testing.assert_allclose(d[:, 2], 3 * s)
        np.testing.assert_allclose(d[:, 3], 0.5 * (15 * s**2 - 3))


class TestInteriorBasis:
    def test_k1_empty(self):
        assert len(pq.interior_dual_basis(1)) == 0

    def test_k3_constant(self):
        b = pq.interior_dual_basis(3)
        assert b.tolist() == [[0, 0]]

    @pytest.mark.parametrize("k", [2, 4, 5])
    def test_unsupported(self, k):
        with pytest.raises(pq.UnsupportedOrderError):
            pq.interior_dual_basis(k)


class TestProjection:
    def test_constant(self):
        for p in (0, 2):
            c = pq.project_f(lambda x, y: 3.0 + 0 * x, REF, p)
            assert np.isclose(c[0, 0], 3.0) and np.allclose(c[0, 1:], 0.0)

    def test_mean(self):
        c = pq.project_f(lambda x, y: x, REF, 0)
        assert np.isclose(c[0, 0], 1.0 / 3.0)

    def test_orthogonality(self):
        rng = np.random.default_rng(3)
        coords = np.array([[[0.1, 0.2], [1.3, -0.1], [0.4, 0.9]]])
        shift = rng.normal()
        f = lambda x, y: np.exp(x) * np.sin(3 * y) + shift
        for p in (0, 2):
            # orthogonality holds for the discrete inner product the projection uses
            c = pq.project_f(f, coords, p, degree=12)
            r = pq.quad_tri(12)
            x = pq.element_points(coords, r.points)
            cen, diam, area = pq.element_geometry(coords)
            V = pq.vander(pq.scaled(x, cen, diam), pq.monomials(p))
            res = f(x[..., 0], x[..., 1]) - np.einsum("tqi,ti->tq", V, c)
            mom = np.einsum("q,tq,tqi->ti", 2 * area[0] * r.weights, res, V)
            assert np.max(np.abs(mom)) < 1e-12


class TestOscillation:
    def test_polynomial_zero(self):
        osc = pq.oscillation(lambda x, y: 2.0 + x - y, REF, [1.0], k=3)
        assert osc[0] < 1e-13

    def test_x_squared(self):
        osc = pq.oscillation(lambda x, y: x**2, REF, [1.0], k=1)
        ref = np.sqrt(2.0) * np.sqrt(7.0 / 360.0)
        assert np.isclose(osc[0], ref, rtol=1e-12)

    def test_coefficient_scaling(self):
        f = lambda x, y: np.sin(x * y)
        a = pq.oscillation(f, REF, [1.0], k=1)
        b = pq.oscillation(f, REF, [4.0], k=1)
        assert np.isclose(b[0], 0.5 * a[0], rtol=1e-14)
