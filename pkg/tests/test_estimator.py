import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad

from eqfem import nc
from eqfem.coefficient import Coefficient
from eqfem.estimator import (IndicatorSet, MeshMismatchError, efficiency_index, energy_error, energy_norm,
                             indicators, local_efficiency_ratio, reliability_ratio, singular_elements)
from eqfem.mesh import criss_cross, refine_uniform
from eqfem.problems import kellogg_energy_oracle, kellogg_problem
from eqfem.recovery import recover_flux, recover_gradient
from eqfem.verify import random_case


def estimate(sol, g=None, u_D=None, f=None):
    return indicators(sol, recover_flux(sol, g), recover_gradient(sol, u_D=u_D), f=f)


class TestIndicators:
    def test_linear_exact(self):
        u = lambda x, y: 3 * x - y
        sol = nc.solve_problem(criss_cross(3), Coefficient.scalar({0: 2.0}), lambda x, y: 0 * x, u_D=u)
        assert estimate(sol, u_D=u).eta <= 1e-10

    def test_kellogg_flux_term_vanishes(self):
        p = kellogg_problem(verify=False)
        sol = nc.solve_problem(p.mesh(), p.coefficient, p.f, u_D=p.u_D)
        ind = estimate(sol, u_D=p.u_D, f=p.f)
        assert ind.eta_sigma <= 1e-10 * ind.eta
        assert ind.osc == 0.0
        assert abs(ind.eta - ind.eta_rho) <= 1e-12 * ind.eta

    @settings(max_examples=10, deadline=None)
    @given(st.floats(1e-3, 1e3), st.sampled_from([1, 3]))
    def test_coefficient_scaling(self, c, k):
        case = random_case(np.random.default_rng(17), k, max_elements=150)
        f, g = case.f, case.g
        s1 = nc.solve_problem(case.mesh, case.coefficient, f, g, case.u_D, k=k)
        s2 = nc.solve_problem(case.mesh, case.coefficient.scaled(c), lambda x, y: c * f(x, y),
                              lambda x, y: c * g(x, y), case.u_D, k=k)
        np.testing.assert_allclose(s2.values, s1.values, rtol=1e-8, atol=1e-10 * np.abs(s1.values).max())
        i1 = estimate(s1, g, case.u_D)
        i2 = indicators(s1, recover_flux(s2, lambda x, y: c * g(x, y)), recover_gradient(s1, u_D=case.u_D),
                        case.coefficient.scaled(c))
        np.testing.assert_allclose(i2.eta_sigma_K, np.sqrt(c) * i1.eta_sigma_K, rtol=1e-6,
                                   atol=1e-9 * np.sqrt(c) * i1.eta_sigma_K.max())
        np.testing.assert_allclose(i2.eta_rho_K, np.sqrt(c) * i1.eta_rho_K, rtol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0, 1e3)), min_size=1, max_size=40))
    def test_pythagoras(self, rows):
        a = np.array(rows)
        ind = IndicatorSet(a[:, 0], a[:, 1], a[:, 2])
        assert abs(ind.eta**2 - (ind.eta_sigma**2 + ind.eta_rho**2)) <= 1e-12 * max(ind.eta**2, 1e-300)
        np.testing.assert_allclose(ind.eta_K**2, a[:, 0]**2 + a[:, 1]**2, rtol=1e-12)
        assert abs(np.sum(ind.eta_K**2) - ind.eta**2) <= 1e-12 * max(ind.eta**2, 1e-300)

    def test_mesh_mismatch(self):
        c = random_case(np.random.default_rng(0), 1)
        sol = nc.solve_problem(c.mesh, c.coefficient, c.f, c.g, c.u_D)
        other = nc.solve_problem(refine_uniform(c.mesh), c.coefficient, c.f, c.g, c.u_D)
        with pytest.raises(MeshMismatchError):
            indicators(sol, recover_flux(sol, c.g), recover_gradient(other))


class TestEnergyError:
    def test_exact_in_space(self):
        u = lambda x, y: x**3 - 3 * x * y**2 + y
        gu = lambda x, y: np.stack([3 * x**2 - 3 * y**2, -6 * x * y + 1], -1)
        sol = nc.solve_problem(criss_cross(2), Coefficient.scalar({0: 1.0}), lambda x, y: 0 * x, u_D=u, k=3)
        loc, err = energy_error(sol, gu)
        assert err <= 1e-11 and loc.shape == (sol.mesh.n_elements,)

    def test_quadratic_on_one_element(self, reference_triangle):
        u = lambda x, y: x**2
        sol = nc.solve_problem(reference_triangle, Coefficient.scalar({0: 1.0}), lambda x, y: -2 + 0 * x, u_D=u)
        _, err = energy_error(sol, lambda x, y: np.stack(np.broadcast_arrays(2 * x, 0 * x), -1))
        g_h = sol.eval(0, [0.2, 0.2])[1]
        ref2, _ = dblquad(lambda y, x: (2 * x - g_h[0]) ** 2 + g_h[1] ** 2, 0, 1, 0, lambda x: 1 - x,
                          epsabs=1e-14, epsrel=1e-13)
        assert abs(err - np.sqrt(ref2)) <= 1e-12

    def test_kellogg_energy_norm(self):
        p = kellogg_problem(verify=False)
        val = energy_norm(refine_uniform(p.mesh(), 2), p.exact_gradient, p.coefficient, p.singular_points)
        assert abs(val - kellogg_energy_oracle()) <= 1e-8 * val

    def test_singular_elements(self):
        m = criss_cross(2)
        hit, local = singular_elements(m, np.zeros((1, 2)))
        assert len(hit) == 8   # two triangles of each of the four squares at the origin
        np.testing.assert_allclose(m.coords[hit, local], 0.0)

    def test_nonfinite_gradient(self, reference_triangle):
        sol = nc.solve_problem(reference_triangle, Coefficient.scalar({0: 1.0}), lambda x, y: 0 * x)
        with pytest.raises(FloatingPointError):
            energy_error(sol, lambda x, y: np.stack([np.full_like(x, np.nan), 0 * y], -1))


class TestRatios:
    def test_efficiency_index(self):
        ind = IndicatorSet(np.array([3.0]), np.array([4.0]), np.zeros(1))
        assert efficiency_index(ind, 5.0) == 1.0
        assert efficiency_index(0.0, 0.0) == 1.0
        assert efficiency_index(ind, 0.0) == np.inf

    def test_reliability_ratio(self):
        ind = IndicatorSet(np.array([1.0]), np.array([2.0]), np.array([0.5]))
        assert np.isclose(reliability_ratio(ind, 3.5), 1.0)

    def test_local_efficiency(self):
        m = criss_cross(1)
        eta = np.array([1.0, 0.0, 0.0, 0.0])
        ind = IndicatorSet(eta, np.zeros(4), np.zeros(4))
        err = np.array([0.0, 0.5, 0.0, 0.0])
        # omega_0 contains element 1, so the ratio is 1 / 0.5
        assert np.isclose(local_efficiency_ratio(m, ind, err), 2.0)
