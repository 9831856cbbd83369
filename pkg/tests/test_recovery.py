import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqfem import dg, nc
from eqfem import polyquad as pq
from eqfem.coefficient import Coefficient
from eqfem.estimator import indicators
from eqfem.mesh import criss_cross, refine
from eqfem.recovery import (EquilibrationError, check_hcurl, check_hdiv, read_field_moments, recover_flux,
                            recover_flux_dg, recover_gradient, write_field)
from eqfem.verify import brute_force_oracle, local_identity_defect, random_case, two_triangle_mesh

ZERO = lambda x, y: 0 * x
LIN = lambda x, y: 2 * x - 3 * y + 1
LIN_GRAD = np.array([2.0, -3.0])


def interior_points():
    return pq.quad_tri(4).points


class TestFlux:
    @pytest.mark.parametrize("k", [1, 3])
    def test_linear_solution(self, k):
        m = refine(criss_cross(2), [0, 5])
        sol = nc.solve_problem(m, Coefficient.scalar({0: 1.0}), ZERO, u_D=LIN, k=k)
        flux = recover_flux(sol)
        v = flux.values_at(interior_points())
        np.testing.assert_allclose(v, np.broadcast_to(-LIN_GRAD, v.shape), atol=1e-12)
        ind = indicators(sol, flux, recover_gradient(sol, u_D=LIN))
        assert ind.eta_sigma < 1e-12

    def test_marini_oracle(self):
        fl, fr, _, _ = brute_force_oracle(1.0, 1.0, 1.0)
        assert np.max(np.abs(fl - fr)) < 1e-12

    @settings(max_examples=8, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([1, 3]))
    def test_equilibrated(self, seed, k):
        c = random_case(np.random.default_rng(seed), k, max_elements=300)
        sol = nc.solve_problem(c.mesh, c.coefficient, c.f, c.g, c.u_D, k=k)
        rep = check_hdiv(recover_flux(sol, c.g), c.f, c.g, sol=sol)
        assert rep.max_normal_jump <= 1e-10
        assert rep.max_div_defect <= 1e-10
        assert rep.max_neumann_defect <= 1e-10

    @pytest.mark.parametrize("k", [1, 3])
    def test_local_identity(self, k):
        c = random_case(np.random.default_rng(21 + k), k)
        sol = nc.solve_problem(c.mesh, c.coefficient, c.f, c.g, c.u_D, k=k)
        assert local_identity_defect(sol, recover_flux(sol, c.g), c.f, c.g) <= 1e-9

    def test_detects_perturbed_moment(self):
        c = random_case(np.random.default_rng(3), 1)
        sol = nc.solve_problem(c.mesh, c.coefficient, c.f, c.g, c.u_D)
        flux = recover_flux(sol, c.g)
        moments = flux.edge_moments.copy()
        moments[c.mesh.interior_edges[0]] += 1e-3
        bad = dataclasses.replace(flux, edge_moments=moments)
        assert check_hdiv(bad, c.f, c.g).max_div_defect > 1e-8

    def test_detects_wrong_source(self):
        m = criss_cross(3)
        f = lambda x, y: 1.0 + x
        sol = nc.solve_problem(m, Coefficient.scalar({0: 1.0}), f)
        flux = recover_flux(sol)
        assert check_hdiv(flux, f).max_div_defect < 1e-12
        assert check_hdiv(flux, lambda x, y: 2.0 + x).max_div_defect > 1e-3

    def test_unsolved_system_rejected(self):
        c = random_case(np.random.default_rng(8), 1)
        sol = nc.solve_problem(c.mesh, c.coefficient, c.f, c.g, c.u_D)
        noisy = dataclasses.replace(sol, values=sol.values * (1 + 1e-3 * np.random.default_rng(0).normal(size=len(sol.values))))
        with pytest.raises(EquilibrationError):
            recover_flux(noisy, c.g)


class TestGradient:
    @pytest.mark.parametrize("k", [1, 3])
    def test_linear_solution(self, k):
        m = criss_cross(3, subdomain_of=lambda c: (c[:, 0] > 0).astype(int))
        sol = nc.solve_problem(m, Coefficient.scalar({0: 1.0, 1: 1.0}), ZERO, u_D=LIN, k=k)
        grad = recover_gradient(sol, u_D=LIN)
        v = grad.values_at(interior_points())
        np.testing.assert_allclose(v, np.broadcast_to(LIN_GRAD, v.shape), atol=1e-12)

    def test_plain_average_for_identity(self):
        c = random_case(np.random.default_rng(2), 1)
        coeff = Coefficient.scalar({i: 1.0 for i in range(4)})
        sol = nc.solve_problem(c.mesh, coeff, c.f, c.g, c.u_D)
        m = sol.mesh
        grad = recover_gradient(sol)
        F = m.interior_edges
        gK = sol.grad_at(pq.quad_tri(0).points)[:, 0]
        avg = 0.5 * (gK[m.edge_elements[F, 0]] + gK[m.edge_elements[F, 1]])
        ref = m.edge_lengths[F] * np.einsum("fd,fd->f", avg, m.tangents[F])
        np.testing.assert_allclose(grad.edge_moments[F, 0], ref, atol=1e-13)

    def test_weighted_average(self):
        m, _ = two_triangle_mesh()
        F = int(m.interior_edges[0])
        km, kp = m.edge_elements[F]
        coeff = Coefficient.scalar({int(m.subdomain[km]): 4.0, int(m.subdomain[kp]): 1.0})
        u = lambda x, y: x * x + 0.5 * y
        sol = nc.solve_problem(m, coeff, lambda x, y: -8.0 + 0 * x, u_D=u)
        grad = recover_gradient(sol, u_D=u)
        gK = sol.grad_at(pq.quad_tri(0).points)[:, 0]
        left = m.edge_lengths[F] * gK[km] @ m.tangents[F]
        right = m.edge_lengths[F] * gK[kp] @ m.tangents[F]
        assert abs(left - right) > 1e-3
        assert abs(grad.edge_moments[F, 0] - (0.8 * left + 0.2 * right)) < 1e-13

    @settings(max_examples=8, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([1, 3]))
    def test_tangential_conformity(self, seed, k):
        c = random_case(np.random.default_rng(seed), k, max_elements=300)
        sol = nc.solve_problem(c.mesh, c.coefficient, c.f, c.g, None, k=k)
        grad = recover_gradient(sol)
        rep = check_hcurl(grad)
        assert rep.max_tangential_jump <= 1e-10
        assert rep.max_dirichlet_trace <= 1e-10
        assert np.all(grad.edge_moments[c.mesh.dirichlet_edges] == 0.0)

    def test_nonhomogeneous_dirichlet_trace(self):
        c = random_case(np.random.default_rng(12), 3)
        u_D = lambda x, y: np.sin(x) + x * y
        sol = nc.solve_problem(c.mesh, c.coefficient, c.f, c.g, u_D, k=3)
        assert check_hcurl(recover_gradient(sol, u_D=u_D), u_D=u_D).max_dirichlet_trace <= 1e-10

    def test_detects_perturbed_moment(self):
        c = random_case(np.random.default_rng(1), 1)
        sol = nc.solve_problem(c.mesh, c.coefficient, c.f, c.g, None)
        grad = recover_gradient(sol)
        mom = grad.edge_moments.copy()
        mom[c.mesh.dirichlet_edges[0]] = 0.1
        assert check_hcurl(dataclasses.replace(grad, edge_moments=mom)).max_dirichlet_trace > 1e-3


class TestDGFlux:
    def test_continuous_solution(self):
        m = criss_cross(3)
        sol = dg.solve_dg_problem(m, Coefficient.scalar({0: 1.0}), ZERO, u_D=LIN)
        flux = recover_flux_dg(sol)
        h = m.edge_lengths
        np.testing.assert_allclose(flux.edge_moments[:, 0], -h * (m.normals @ LIN_GRAD), atol=1e-12)

    @settings(max_examples=6, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_equilibrated(self, seed):
        c = random_case(np.random.default_rng(seed), 1, max_elements=300)
        gamma = dg.suggest_gamma(c.coefficient, c.mesh)
        sol = dg.solve_dg_problem(c.mesh, c.coefficient, c.f, c.g, c.u_D, gamma=gamma)
        rep = check_hdiv(recover_flux_dg(sol, c.g), c.f, c.g, sol=sol)
        assert rep.max_normal_jump <= 1e-10
        assert rep.max_div_defect <= 1e-10
        assert rep.max_neumann_defect <= 1e-10


def test_field_roundtrip(tmp_path):
    c = random_case(np.random.default_rng(6), 3)
    sol = nc.solve_problem(c.mesh, c.coefficient, c.f, c.g, c.u_D, k=3)
    for name, field in (("flux", recover_flux(sol, c.g)), ("grad", recover_gradient(sol, u_D=c.u_D))):
        write_field(tmp_path / name, field)
        tag, k, edge, coef = read_field_moments(tmp_path / name, c.mesh)
        assert tag.startswith("rt" if name == "flux" else "ne") and k == 3
        np.testing.assert_array_equal(edge, field.edge_moments)
        np.testing.assert_array_equal(coef, field.coef)
