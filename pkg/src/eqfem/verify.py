"""Self-check suites: random problems, conformity, equilibration, patch tests, oracles.

Every check yields a :class:`Check` holding the measured value and its
tolerance, so the CLI and the test-suite print and assert the same numbers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dg, nc
from . import polyquad as pq
from .coefficient import Coefficient
from .estimator import energy_error, energy_norm, indicators
from .mesh import DIRICHLET, NEUMANN, build_topology, criss_cross, refine, refine_uniform
from .problems import (fd_laplacian, kellogg_energy_oracle, kellogg_oracle, kellogg_problem, lshape_exact,
                       manufactured_problem)
from .recovery import (check_hcurl, check_hdiv, recover_flux, recover_flux_dg, recover_gradient)


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}: {self.value:.3e} (tol {self.tol:.1e})"


# ---------------------------------------------------------------------------
# random problems
# ---------------------------------------------------------------------------

@dataclass
class RandomCase:
    mesh: object
    coefficient: Coefficient
    f: object
    g: object
    u_D: object
    k: int


def _random_poly(rng, degree, scale=1.0):
    c = rng.normal(size=(degree + 1, degree + 1)) * scale
    mask = np.add.outer(np.arange(degree + 1), np.arange(degree + 1)) <= degree
    c = c * mask

    def p(x, y):
        return np.polynomial.polynomial.polyval2d(x, y, c)
    return p


def random_tensor(rng, scale, max_aniso=10.0):
    t = rng.uniform(0, np.pi)
    R = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    lam = scale * np.array([1.0, rng.uniform(1.0, max_aniso)])
    return R @ np.diag(lam) @ R.T


def random_case(rng, k: int = 1, max_elements: int = 500, max_jump: float = 1e6, isotropic: bool = False) -> RandomCase:
    """Random mesh, piecewise-constant SPD A, polynomial f, admissible g."""
    n = int(rng.integers(2, 5))
    sides = rng.random(4) < 0.35
    sides[rng.integers(4)] = False                      # keep some Dirichlet boundary

    def bnd(mid):
        tag = np.full(len(mid), DIRICHLET)
        tests = [mid[:, 0] < -0.999, mid[:, 0] > 0.999, mid[:, 1] < -0.999, mid[:, 1] > 0.999]
        for on, hit in zip(sides, tests):
            if on:
                tag[hit] = NEUMANN
        return tag

    nsub = 4
    mesh = criss_cross(n, boundary=bnd, subdomain_of=lambda c: rng.integers(0, nsub, len(c)))
    for _ in range(int(rng.integers(1, 6))):
        if mesh.n_elements > max_elements // 3:
            break
        marked = rng.choice(mesh.n_elements, max(1, mesh.n_elements // 6), replace=False)
        trial = refine(mesh, marked)
        if trial.n_elements > max_elements:
            break
        mesh = trial
    scales = 10.0 ** rng.uniform(0, np.log10(max_jump), nsub)
    scales[rng.integers(nsub)] = 1.0
    if isotropic:
        tensors = {i: scales[i] * np.eye(2) for i in range(nsub)}
    else:
        tensors = {i: random_tensor(rng, scales[i]) for i in range(nsub)}
    coeff = Coefficient(tensors)
    f = _random_poly(rng, int(rng.integers(0, 4)))
    g = _random_poly(rng, k - 1)
    u_D = _random_poly(rng, 2) if rng.random() < 0.5 else None
    return RandomCase(mesh, coeff, f, g, u_D, k)


# ---------------------------------------------------------------------------
# local identity on each element
# ---------------------------------------------------------------------------

def local_identity_defect(sol, flux, f, g=None, n_q: int = 20, rng=None) -> float:
    """Largest relative defect of

        int_{dK} sigma^ . n_K q ds = int_K sigma~ . grad q dx + int_K f q dx (- int_{dK cap Gamma_N} g q)

    over ``n_q`` random q in P_k(K) on every element.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    mesh, k = sol.mesh, sol.k
    exps = pq.monomials(k)
    Q = rng.normal(size=(n_q, len(exps)))                 # same scaled-monomial coefficients on all K
    # edge side
    erule = pq.quad_edge(2 * k + 2)
    nT = mesh.n_elements
    lhs = np.zeros((nT, n_q))
    neu = np.zeros((nT, n_q))
    for i in range(3):
        F = mesh.tri_edges[:, i]
        K = np.arange(nT)
        x = nc.edge_points(mesh, F, erule.points)
        xh = (x - mesh.centers[:, None, :]) / mesh.diameters[:, None, None]
        V = pq.vander(xh, exps)                           # (nT, nq, m)
        sn = flux.component_on_edges(K, F, erule.points) * mesh.tri_signs[:, i, None]
        w = 0.5 * mesh.edge_lengths[F][:, None] * erule.weights
        lhs += np.einsum("tq,tq,tqm,sm->ts", w, sn, V, Q)
        isn = mesh.boundary_tag[F] == NEUMANN
        if isn.any() and g is not None:
            nrule = pq.quad_edge(nc.load_degree(k))
            xn = nc.edge_points(mesh, F[isn], nrule.points)
            Vn = pq.vander((xn - mesh.centers[isn][:, None, :]) / mesh.diameters[isn][:, None, None], exps)
            gv = np.broadcast_to(g(xn[..., 0], xn[..., 1]), xn.shape[:-1])
            wn = 0.5 * mesh.edge_lengths[F[isn]][:, None] * nrule.weights
            neu[isn] += np.einsum("tq,tq,tqm,sm->ts", wn, gv, Vn, Q)
    # volume side
    rule = pq.quad_tri(2 * k)
    x = pq.element_points(mesh.coords, rule.points)
    G = pq.vander_grad(pq.scaled(x, mesh.centers, mesh.diameters), exps, mesh.diameters[:, None])
    w = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    vol = np.einsum("tq,tqd,tqmd,sm->ts", w, sol.flux_at(rule.points), G, Q)
    lrule = pq.quad_tri(nc.load_degree(k))
    xl = pq.element_points(mesh.coords, lrule.points)
    Vl = pq.vander(pq.scaled(xl, mesh.centers, mesh.diameters), exps)
    wl = 2.0 * mesh.areas[:, None] * lrule.weights[None, :]
    load = np.einsum("tq,tq,tqm,sm->ts", wl, np.broadcast_to(f(xl[..., 0], xl[..., 1]), wl.shape), Vl, Q)
    rhs = vol + load
    # magnitude of the terms that cancel in sum_l c_l (b_l - (K U)_l), c = DOFs of q
    D = sol.space.dof_matrix()
    cq = np.einsum("tlm,sm->tsl", D, Q)
    sysm = sol.system
    U = sol.values[sysm.element_dofs]
    mag = np.einsum("tij,tj->ti", np.abs(sysm.local_matrix), np.abs(U)) + np.abs(sysm.local_load)
    ref = np.abs(vol) + np.abs(load) + np.abs(lhs) + np.abs(neu) + np.einsum("tsl,tl->ts", np.abs(cq), mag)
    # with g in P_{k-1}(F) the Neumann terms on both sides coincide
    d = np.abs(lhs - rhs)
    return float(np.max(d / np.where(ref > 0, ref, 1.0)))


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def suite_conformity(n_cases: int = 6, seed: int = 1) -> list[Check]:
    rng = np.random.default_rng(seed)
    jn = jt = dtr = 0.0
    for i in range(n_cases):
        for k in (1, 3):
            c = random_case(rng, k, max_elements=300)
            sol = nc.solve_problem(c.mesh, c.coefficient, c.f, c.g, None, k=k)
            jn = max(jn, check_hdiv(recover_flux(sol, c.g), c.f, c.g).max_normal_jump)
            rep = check_hcurl(recover_gradient(sol))
            jt, dtr = max(jt, rep.max_tangential_jump), max(dtr, rep.max_dirichlet_trace)
    return [Check("RT normal-trace jump", jn, 1e-10), Check("NE tangential jump", jt, 1e-10),
            Check("NE Dirichlet tangential trace", dtr, 1e-10)]


def suite_equilibration(n_cases: int = 20, seed: int = 2) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = {"NC normal jump": 0.0, "NC divergence defect": 0.0, "NC Neumann defect": 0.0,
           "DG normal jump": 0.0, "DG divergence defect": 0.0, "DG Neumann defect": 0.0}
    for i in range(n_cases):
        k = (1, 3)[i % 2]
        c = random_case(rng, k)
        sol = nc.solve_problem(c.mesh, c.coefficient, c.f, c.g, c.u_D, k=k)
        r = check_hdiv(recover_flux(sol, c.g), c.f, c.g, sol=sol)
        out["NC normal jump"] = max(out["NC normal jump"], r.max_normal_jump)
        out["NC divergence defect"] = max(out["NC divergence defect"], r.max_div_defect)
        out["NC Neumann defect"] = max(out["NC Neumann defect"], r.max_neumann_defect)
        c1 = random_case(rng, 1)
        gamma = dg.suggest_gamma(c1.coefficient, c1.mesh)
        ds = dg.solve_dg_problem(c1.mesh, c1.coefficient, c1.f, c1.g, c1.u_D, gamma=gamma)
        r = check_hdiv(recover_flux_dg(ds, c1.g), c1.f, c1.g, sol=ds)
        out["DG normal jump"] = max(out["DG normal jump"], r.max_normal_jump)
        out["DG divergence defect"] = max(out["DG divergence defect"], r.max_div_defect)
        out["DG Neumann defect"] = max(out["DG Neumann defect"], r.max_neumann_defect)
    return [Check(k, v, 1e-10) for k, v in out.items()]


def suite_local_identity(n_cases: int = 6, seed: int = 3) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst = {1: 0.0, 3: 0.0}
    for i in range(n_cases):
        for k in (1, 3):
            c = random_case(rng, k, max_elements=300)
            sol = nc.solve_problem(c.mesh, c.coefficient, c.f, c.g, c.u_D, k=k)
            flux = recover_flux(sol, c.g)
            worst[k] = max(worst[k], local_identity_defect(sol, flux, c.f, c.g, rng=rng))
    return [Check(f"local boundary identity k={k}", v, 1e-9) for k, v in worst.items()]


def patch_results() -> list[Check]:
    checks = []
    for method, k in (("nc1", 1), ("nc3", 3), ("dg1", 1)):
        p = manufactured_problem(k, 1.0)
        m = p.mesh()
        if method.startswith("nc"):
            sol = nc.solve_problem(m, p.coefficient, p.f, p.g, p.u_D, k=k)
            flux, grad = recover_flux(sol, p.g), recover_gradient(sol, u_D=p.u_D)
        else:
            sol = dg.solve_dg_problem(m, p.coefficient, p.f, p.g, p.u_D)
            flux, grad = recover_flux_dg(sol, p.g), dg.recover_gradient_dg(sol)
        _, err = energy_error(sol, p.exact_gradient)
        ind = indicators(sol, flux, grad)
        checks += [Check(f"{method} patch energy error", err, 1e-10), Check(f"{method} patch estimator", ind.eta, 1e-9)]
    p = manufactured_problem(1, 1e4)
    m = p.mesh()
    sol = nc.solve_problem(m, p.coefficient, p.f, p.g, p.u_D, k=1)
    ind = indicators(sol, recover_flux(sol, p.g), recover_gradient(sol, u_D=p.u_D))
    checks.append(Check("nc1 kinked transmission solution (jump 1e4) estimator", ind.eta, 1e-9))
    return checks


def suite_patch() -> list[Check]:
    return patch_results()


def two_triangle_mesh(a_minus: float = 1.0, a_plus: float = 100.0):
    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    t = np.array([[1, 2, 0], [3, 0, 2]])
    m = build_topology(v, t, np.array([0, 1]))
    return m, Coefficient.scalar({0: a_minus, 1: a_plus})


def brute_force_oracle(a_minus: float = 1.0, a_plus: float = 100.0, fval: float = 3.0):
    """Dense reference for k = 1 on two triangles: standard Crouzeix-Raviart
    functions (midpoint value one), Marini's RT_0 flux and the weighted
    tangential average.  Returns (library flux moments, reference, library
    gradient moments, reference)."""
    m, coeff = two_triangle_mesh(a_minus, a_plus)
    uD = lambda x, y: x + y * y
    f = lambda x, y: np.full(np.broadcast(x, y).shape, fval)
    sol = nc.solve_problem(m, coeff, f, None, uD, k=1)
    flux = recover_flux(sol)
    grad = recover_gradient(sol, u_D=uD)

    # --- reference ---
    V, E = m.vertices, m.edges
    mid = 0.5 * (V[E[:, 0]] + V[E[:, 1]])
    h = np.linalg.norm(V[E[:, 1]] - V[E[:, 0]], axis=1)
    a = np.array([a_minus, a_plus])[m.subdomain]
    nE = len(E)
    Kmat = np.zeros((nE, nE))
    b = np.zeros(nE)
    grads = []
    for K, tri in enumerate(m.triangles):
        P = V[tri]
        area = 0.5 * np.linalg.det(np.column_stack([P[1] - P[0], P[2] - P[0]]))
        B = np.linalg.inv(np.vstack([np.ones(3), P.T]))       # rows: bary coefficients
        glam = B[:, 1:]                                        # grad lambda_i
        gpsi = -2.0 * glam                                     # CR function opposite vertex i
        eids = [np.flatnonzero((np.sort(E, axis=1) == np.sort([tri[(i + 1) % 3], tri[(i + 2) % 3]])).all(axis=1))[0]
                for i in range(3)]
        grads.append((eids, gpsi, area))
        Kmat[np.ix_(eids, eids)] += a[K] * area * gpsi @ gpsi.T
        b[eids] += fval * area / 3.0
    # Dirichlet values: edge means of u_D by Simpson (exact for quadratics)
    ends = V[E]
    mean = (uD(*ends[:, 0].T) + 4 * uD(*mid.T) + uD(*ends[:, 1].T)) / 6.0
    fixed = m.boundary_tag == DIRICHLET
    U = np.where(fixed, mean, 0.0)
    free = ~fixed
    U[free] = np.linalg.solve(Kmat[np.ix_(free, free)], b[free] - Kmat[np.ix_(free, fixed)] @ U[fixed])
    ref_flux = np.zeros(nE)
    ref_grad = np.zeros(nE)
    tang = (ends[:, 1] - ends[:, 0]) / h[:, None]
    nrm = np.column_stack([tang[:, 1], -tang[:, 0]])
    gK = []
    for K, (eids, gpsi, area) in enumerate(grads):
        gK.append(gpsi.T @ U[eids])
    cK = np.array([V[t].mean(axis=0) for t in m.triangles])
    theta = a[m.edge_elements[:, 0]] / (a[m.edge_elements[:, 0]] + a[np.maximum(m.edge_elements[:, 1], 0)])
    for F in range(nE):
        Km = m.edge_elements[F, 0]
        sig = -a[Km] * gK[Km]
        # Marini: sigma^ = sigma~ + f/2 (x - c_K); the normal part is affine so the midpoint rule is exact
        ref_flux[F] = h[F] * (sig + 0.5 * fval * (mid[F] - cK[Km])) @ nrm[F]
        if m.boundary_tag[F] == DIRICHLET:
            ref_grad[F] = uD(*ends[F, 1]) - uD(*ends[F, 0])
        else:
            Kp = m.edge_elements[F, 1]
            ref_grad[F] = h[F] * (theta[F] * gK[Km] + (1 - theta[F]) * gK[Kp]) @ tang[F]
    return flux.edge_moments[:, 0], ref_flux, grad.edge_moments[:, 0], ref_grad


def theta_average_oracle(a_minus: float = 2.0, a_plus: float = 50.0) -> float:
    """Largest mismatch between library gradient moments and a hand-built
    theta-weighted tangential average on the two-triangle mesh."""
    _, _, lib, ref = brute_force_oracle(a_minus, a_plus)
    m, _ = two_triangle_mesh(a_minus, a_plus)
    inner = m.interior_edges
    return float(np.max(np.abs(lib[inner] - ref[inner])))


def suite_oracle() -> list[Check]:
    res = kellogg_oracle()
    checks = [Check("checkerboard continuity", res["continuity"], 1e-9),
              Check("checkerboard flux jump", res["flux_jump"], 1e-9),
              Check("checkerboard finite-difference Laplacian", res["laplacian"], 1e-6)]
    rng = np.random.default_rng(5)
    pts = rng.uniform(-0.9, 0.9, (2, 400))
    keep = ~((pts[0] > -0.02) & (pts[1] < 0.02)) & (np.hypot(*pts) > 0.05)
    lap = fd_laplacian(lshape_exact, pts[0][keep], pts[1][keep])
    checks.append(Check("L-shape -Laplacian = -2", float(np.max(np.abs(-lap + 2.0))), 1e-6))
    p = kellogg_problem(verify=False)
    mesh_val = energy_norm(refine_uniform(p.mesh(), 2), p.exact_gradient, p.coefficient, p.singular_points)
    ref = kellogg_energy_oracle()
    checks.append(Check("checkerboard energy norm vs angular oracle (rel)", abs(mesh_val - ref) / ref, 1e-8))
    fl, fr, gl, gr = brute_force_oracle()
    checks.append(Check("two-triangle flux moments vs dense reference", float(np.max(np.abs(fl - fr))), 1e-12))
    checks.append(Check("two-triangle gradient moments vs dense reference", float(np.max(np.abs(gl - gr))), 1e-12))
    return checks


SUITES = {
    "conformity": suite_conformity,
    "equilibration": lambda: suite_equilibration() + suite_local_identity(),
    "patch": suite_patch,
    "oracle": suite_oracle,
}
