import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqfem.mesh import (DIRICHLET, INTERIOR, NEUMANN, MeshError, build_topology, criss_cross, dorfler_mark,
                        lshape_fan, read_mesh, refine, refine_uniform, sign_chi, sign_mu, write_mesh)
from eqfem.problems import kellogg_problem


def assert_conforming(mesh, domain_area):
    # each edge has one or two elements; edges with one element lie on the outer boundary
    assert np.all(mesh.edge_elements[:, 0] >= 0)
    assert np.all((mesh.boundary_tag == INTERIOR) == (mesh.edge_elements[:, 1] >= 0))
    np.testing.assert_allclose(mesh.areas.sum(), domain_area, rtol=1e-12)
    assert np.all(mesh.areas > 0)
    # no vertex sits inside an edge (hanging node)
    V, E = mesh.vertices, mesh.edges
    a, b = V[E[:, 0]], V[E[:, 1]]
    for p in V[::max(1, len(V) // 200)]:
        d = b - a
        t = np.einsum("ed,ed->e", p - a, d) / np.einsum("ed,ed->e", d, d)
        off = np.abs(d[:, 0] * (p - a)[:, 1] - d[:, 1] * (p - a)[:, 0]) / np.hypot(d[:, 0], d[:, 1])
        assert not np.any((t > 1e-9) & (t < 1 - 1e-9) & (off < 1e-12))


class TestTopology:
    def test_reference_triangle(self, reference_triangle):
        m = reference_triangle
        assert m.n_edges == 3
        assert np.all(m.boundary_tag == DIRICHLET)
        np.testing.assert_allclose(np.sort(m.edge_lengths), [1.0, 1.0, np.sqrt(2.0)])

    def test_two_triangles(self, unit_square):
        assert unit_square.n_edges == 5
        assert len(unit_square.interior_edges) == 1
        F = unit_square.interior_edges[0]
        assert set(unit_square.edges[F].tolist()) == {0, 2}

    def test_kellogg_mesh_quadrants(self):
        m = kellogg_problem(verify=False).mesh()
        c = m.centers
        assert np.all(m.subdomain == (c[:, 0] * c[:, 1] > 0))
        x, y = m.coords[..., 0], m.coords[..., 1]
        assert np.all(x.min(axis=1) * x.max(axis=1) >= 0)
        assert np.all(y.min(axis=1) * y.max(axis=1) >= 0)

    def test_clockwise_rejected(self):
        with pytest.raises(MeshError):
            build_topology(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), np.array([[0, 1, 2]]))

    def test_hanging_node_rejected(self):
        # vertex (1,1) sits in the middle of the hypotenuse of the first triangle
        v = np.array([[0, 0], [2, 0], [0, 2], [2, 2], [1, 1]], dtype=float)
        t = np.array([[0, 1, 2], [1, 3, 4], [4, 3, 2]])
        with pytest.raises(MeshError):
            build_topology(v, t)

    def test_neumann_tags(self):
        m = criss_cross(2, boundary=lambda mid: np.where(mid[:, 0] > 0.999, NEUMANN, DIRICHLET))
        right = np.abs(m.edge_midpoints[:, 0] - 1.0) < 1e-12
        assert np.all(m.boundary_tag[right] == NEUMANN)
        assert np.all(m.boundary_tag[m.boundary_tag != INTERIOR][~right[m.boundary_tag != INTERIOR]] == DIRICHLET)


class TestSigns:
    def test_mu_interior_and_boundary(self):
        m = criss_cross(3)
        for F in m.interior_edges:
            km, kp = m.edge_elements[F]
            assert sign_mu(m, km, F) == 1
            assert sign_mu(m, kp, F) == -1
        for F in np.flatnonzero(m.boundary_tag != INTERIOR):
            assert sign_mu(m, m.edge_elements[F, 0], F) == 1

    def test_mu_matches_outward_normal(self):
        m = refine(criss_cross(2), [0, 3, 5])
        for K in range(m.n_elements):
            for i, F in enumerate(m.tri_edges[K]):
                outward = m.edge_midpoints[F] - m.centers[K]
                assert np.sign(outward @ m.normals[F]) == m.tri_signs[K, i]

    def test_chi(self, unit_square):
        m = unit_square
        F = m.interior_edges[0]
        for Fp in range(m.n_edges):
            if Fp == F:
                continue
            shared = set(m.edges[F].tolist()) & set(m.edges[Fp].tolist())
            v = shared.pop()
            expected = 1 if v == m.edges[Fp, 1] else -1
            assert sign_chi(m, F, Fp) == expected
            flipped = dataclasses.replace(m, edges=m.edges.copy())
            flipped.edges[Fp] = flipped.edges[Fp, ::-1]
            assert sign_chi(flipped, F, Fp) == -expected

    def test_chi_same_edge(self, unit_square):
        with pytest.raises(MeshError):
            sign_chi(unit_square, 0, 0)


class TestRefine:
    def test_empty_marking_is_identity(self):
        m = criss_cross(2)
        r = refine(m, [])
        assert r.checksum == m.checksum

    def test_single_mark_two_triangles(self, unit_square):
        r = refine(unit_square, [0])
        assert r.n_elements >= 3
        assert_conforming(r, 1.0)

    def test_uniform_kellogg(self):
        m = kellogg_problem(verify=False).mesh()
        r = refine_uniform(m)
        assert 2 * m.n_elements <= r.n_elements <= 4 * m.n_elements
        assert_conforming(r, 4.0)
        # every new edge length is a parent edge length or half of one
        old = np.unique(np.round(m.edge_lengths, 12))
        new = np.unique(np.round(r.edge_lengths, 12))
        allowed = np.concatenate([old, np.round(old / 2, 12)])
        assert np.all(np.isin(new, allowed))
        # the refinement edges (the longest ones, length 0.5) are all bisected
        assert not np.any(np.isclose(r.edge_lengths, 0.5))
        assert np.any(np.isclose(r.edge_lengths, 0.25))

    def test_subdomains_preserved(self):
        p = kellogg_problem(verify=False)
        m = p.mesh()
        rng = np.random.default_rng(0)
        for _ in range(4):
            m = refine(m, rng.choice(m.n_elements, size=max(1, m.n_elements // 5), replace=False))
        c = m.centers
        assert np.all(m.subdomain == (c[:, 0] * c[:, 1] > 0))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 5))
    def test_random_refinement_conforming(self, seed, rounds):
        rng = np.random.default_rng(seed)
        m = lshape_fan()
        for _ in range(rounds):
            k = rng.integers(1, m.n_elements + 1)
            m = refine(m, rng.choice(m.n_elements, size=k, replace=False))
        assert_conforming(m, 3.0)
        assert m.min_angle() > 20.0


class TestDorfler:
    def test_example(self):
        assert dorfler_mark([4, 1, 1, 1, 1], 0.5).tolist() == [0]

    def test_theta_one(self):
        eta = np.array([0.0, 2.0, 1.0, 0.0, 3.0])
        assert dorfler_mark(eta, 1.0).tolist() == [1, 2, 4]

    def test_ties(self):
        assert dorfler_mark([1, 1, 1, 1], 0.5).tolist() == [0, 1]

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            dorfler_mark([1.0, -1.0], 0.5)
        with pytest.raises(ValueError):
            dorfler_mark([1.0, np.nan], 0.5)
        with pytest.raises(ValueError):
            dorfler_mark([1.0], 0.0)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=1, max_size=60),
           st.floats(0.01, 1.0))
    def test_minimal_bulk(self, eta, theta):
        eta = np.asarray(eta)
        e2 = eta**2
        M = dorfler_mark(eta, theta)
        if e2.sum() == 0:
            assert len(M) == 0
            return
        assert e2[M].sum() >= theta * e2.sum() * (1 - 1e-12)
        # no smaller set can reach the bulk: the |M|-1 largest fall short
        top = np.sort(e2)[::-1][:len(M) - 1].sum()
        assert top < theta * e2.sum() * (1 + 1e-12) or len(M) == 1


def test_mesh_roundtrip(tmp_path):
    m = refine(criss_cross(2, boundary=lambda mid: np.where(mid[:, 1] > 0.999, NEUMANN, DIRICHLET),
                           subdomain_of=lambda c: (c[:, 0] > 0).astype(int)), [1, 2])
    write_mesh(tmp_path / "m.txt", m)
    r = read_mesh(tmp_path / "m.txt")
    assert r.checksum == m.checksum
    np.testing.assert_array_equal(r.edges, m.edges)
