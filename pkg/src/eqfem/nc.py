"""Odd-order nonconforming finite elements (k = 1 Crouzeix-Raviart, k = 3).

Degrees of freedom are the edge moments ``int_F v L_{j,F} ds`` (j < k, global
edge orientation) and, for k = 3, the interior mean ``int_K v dx``.  The local
basis on each element is the dual basis of these functionals inside P_k(K);
gluing the local dual bases through shared edge moments gives the global
basis.  DOF numbering: edge moments first (edge id, then j), then interior
moments by element id.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import polyquad as pq
from .coefficient import Coefficient
from .mesh import Mesh
from .solvers import solve_spd

DIRICHLET_DEGREE = 20


def load_degree(k: int) -> int:
    return 2 * k + 2


def edge_points(mesh: Mesh, F, s):
    """Points on edges F (any shape) at affine parameters s (nq,)."""
    a = mesh.vertices[mesh.edges[F, 0]]
    b = mesh.vertices[mesh.edges[F, 1]]
    s = np.asarray(s, dtype=float)
    return 0.5 * (a + b)[..., None, :] + 0.5 * s[:, None] * (b - a)[..., None, :]


@dataclass(frozen=True, eq=False)
class NCSpace:
    mesh: Mesh
    k: int

    def __post_init__(self):
        pq.interior_dual_basis(self.k)  # validates k

    @property
    def m_k(self) -> int:
        return len(pq.interior_dual_basis(self.k))

    @property
    def n_local(self) -> int:
        return 3 * self.k + self.m_k

    @property
    def n_dofs(self) -> int:
        return self.k * self.mesh.n_edges + self.m_k * self.mesh.n_elements

    @cached_property
    def exps(self) -> np.ndarray:
        return pq.monomials(self.k)

    @cached_property
    def element_dofs(self) -> np.ndarray:
        m, k = self.mesh, self.k
        cols = [m.tri_edges[:, i, None] * k + np.arange(k)[None, :] for i in range(3)]
        if self.m_k:
            base = k * m.n_edges
            cols.append(base + np.arange(m.n_elements)[:, None] * self.m_k + np.arange(self.m_k)[None, :])
        return np.hstack(cols)

    @cached_property
    def dirichlet_dofs(self) -> np.ndarray:
        F = self.mesh.dirichlet_edges
        return (F[:, None] * self.k + np.arange(self.k)[None, :]).ravel()

    def dof_matrix(self) -> np.ndarray:
        """Local DOF functionals applied to the scaled monomials, (nT, nloc, nmono)."""
        m, k = self.mesh, self.k
        rule = pq.quad_edge(2 * k + 2)
        Lt = pq.legendre_table(k - 1, rule.points)                    # (nq, k)
        F = m.tri_edges                                                # (nT, 3)
        x = edge_points(m, F, rule.points)                             # (nT, 3, nq, 2)
        xh = (x - m.centers[:, None, None, :]) / m.diameters[:, None, None, None]
        V = pq.vander(xh, self.exps)                                   # (nT, 3, nq, nm)
        w = 0.5 * m.edge_lengths[F][..., None] * rule.weights          # (nT, 3, nq)
        D_edge = np.einsum("tiq,qj,tiqm->tijm", w, Lt, V).reshape(m.n_elements, 3 * k, -1)
        if not self.m_k:
            return D_edge
        trule = pq.quad_tri(2 * k)
        xe = pq.element_points(m.coords, trule.points)
        xh = pq.scaled(xe, m.centers, m.diameters)
        Vm = pq.vander(xh, self.exps)
        P = pq.vander(xh, pq.interior_dual_basis(k))
        wt = 2.0 * m.areas[:, None] * trule.weights[None, :]
        D_int = np.einsum("tq,tqj,tqm->tjm", wt, P, Vm)
        return np.concatenate([D_edge, D_int], axis=1)

    @cached_property
    def basis(self) -> np.ndarray:
        """Monomial coefficients of the local dual basis, (nT, nmono, nloc)."""
        D = self.dof_matrix()
        cond = np.linalg.cond(D)
        if not np.all(np.isfinite(cond)) or cond.max() > 1e12:
            raise np.linalg.LinAlgError("singular local DOF matrix (degenerate element or unsupported order)")
        return np.linalg.inv(D)

    def basis_at(self, bary, elements=None):
        """Values (nT, nq, nloc) and gradients (nT, nq, nloc, 2) of local basis."""
        m = self.mesh
        idx = slice(None) if elements is None else elements
        coords = m.coords[idx]
        x = pq.element_points(coords, bary)
        xh = pq.scaled(x, m.centers[idx], m.diameters[idx])
        V = pq.vander(xh, self.exps)
        G = pq.vander_grad(xh, self.exps, m.diameters[idx][:, None])
        C = self.basis[idx]
        return np.einsum("tqm,tml->tql", V, C), np.einsum("tqmd,tml->tqld", G, C)

    def basis_on_edges(self, s, elements, local_edges):
        """Local basis of ``elements`` evaluated on their local edges at parameter s."""
        m = self.mesh
        F = m.tri_edges[elements, local_edges]
        x = edge_points(m, F, s)
        xh = (x - m.centers[elements, None, :]) / m.diameters[elements, None, None]
        V = pq.vander(xh, self.exps)
        G = pq.vander_grad(xh, self.exps, m.diameters[elements][:, None])
        C = self.basis[elements]
        return np.einsum("fqm,fml->fql", V, C), np.einsum("fqmd,fml->fqld", G, C)


@dataclass(eq=False)
class LinearSystem:
    """Global system with Dirichlet data and the per-element pieces kept for recovery."""

    matrix: sp.csr_matrix
    load: np.ndarray
    fixed: np.ndarray          # constrained dof ids
    fixed_values: np.ndarray
    local_matrix: np.ndarray   # (nT, nloc, nloc)
    local_load: np.ndarray     # (nT, nloc), includes Neumann terms of boundary elements
    element_dofs: np.ndarray

    def reduced(self):
        n = self.matrix.shape[0]
        free = np.ones(n, dtype=bool)
        free[self.fixed] = False
        u0 = np.zeros(n)
        u0[self.fixed] = self.fixed_values
        rhs = self.load - self.matrix @ u0
        A = self.matrix[free][:, free]
        return A, rhs[free], free, u0


@dataclass(eq=False)
class NCSolution:
    space: NCSpace
    values: np.ndarray
    coefficient: Coefficient
    system: LinearSystem | None = None

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    @property
    def k(self) -> int:
        return self.space.k

    @cached_property
    def coef(self) -> np.ndarray:
        """Per-element monomial coefficients of u_T, (nT, nmono)."""
        U = self.values[self.space.element_dofs]
        return np.einsum("tml,tl->tm", self.space.basis, U)

    @property
    def exps(self):
        return self.space.exps

    def eval(self, K: int, x, tol: float = 1e-10):
        """Value and gradient of u_T|_K at a point x of K."""
        m = self.mesh
        x = np.asarray(x, dtype=float)
        c = m.coords[K]
        T = np.column_stack([c[1] - c[0], c[2] - c[0]])
        lam = np.linalg.solve(T, x - c[0])
        if lam.min() < -tol or lam.sum() > 1 + tol:
            raise ValueError(f"point {x} is outside element {K}")
        xh = ((x - m.centers[K]) / m.diameters[K])[None, None, :]
        V = pq.vander(xh, self.exps)[0, 0]
        G = pq.vander_grad(xh, self.exps, np.array([[m.diameters[K]]]))[0, 0]
        return float(V @ self.coef[K]), G.T @ self.coef[K]

    def values_at(self, bary, elements=None):
        m = self.mesh
        idx = slice(None) if elements is None else elements
        x = pq.element_points(m.coords[idx], bary)
        V = pq.vander(pq.scaled(x, m.centers[idx], m.diameters[idx]), self.exps)
        return np.einsum("tqm,tm->tq", V, self.coef[idx])

    def grad_at(self, bary, elements=None):
        """Broken gradient at barycentric points, (nT, nq, 2)."""
        m = self.mesh
        idx = slice(None) if elements is None else elements
        x = pq.element_points(m.coords[idx], bary)
        G = pq.vander_grad(pq.scaled(x, m.centers[idx], m.diameters[idx]), self.exps, m.diameters[idx][:, None])
        return np.einsum("tqmd,tm->tqd", G, self.coef[idx])

    def flux_at(self, bary, elements=None):
        """Numerical flux -A grad_h u_T at barycentric points."""
        A = self.coefficient.element_tensors(self.mesh)
        idx = slice(None) if elements is None else elements
        return -np.einsum("tde,tqe->tqd", A[idx], self.grad_at(bary, elements))

    def residuals(self) -> np.ndarray:
        """Local functionals int_K sigma~ . grad phi + int_K f phi for each local basis
        function (plus the Neumann term for Neumann edges), (nT, nloc)."""
        if self.system is None:
            raise ValueError("solution carries no assembled system")
        U = self.values[self.system.element_dofs]
        return self.system.local_load - np.einsum("tij,tj->ti", self.system.local_matrix, U)


def _coo(element_dofs, local, n):
    rows = np.broadcast_to(element_dofs[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(element_dofs[:, None, :], local.shape).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def dirichlet_moments(mesh: Mesh, F, k: int, u_D):
    """int_F u_D L_{j,F} ds for edges F, (len(F), k)."""
    rule = pq.quad_edge(DIRICHLET_DEGREE)
    x = edge_points(mesh, F, rule.points)
    vals = u_D(x[..., 0], x[..., 1])
    Lt = pq.legendre_table(k - 1, rule.points)
    w = 0.5 * mesh.edge_lengths[F][:, None] * rule.weights
    return np.einsum("fq,fq,qj->fj", w, vals, Lt)


def assemble(mesh: Mesh, coeff: Coefficient, f, g=None, u_D=None, space: NCSpace | None = None, k: int = 1) -> LinearSystem:
    """Stiffness (A grad_h u, grad_h v) and load (f, v) - <g, v>_N on U^k(T)."""
    space = space if space is not None else NCSpace(mesh, k)
    k = space.k
    A = coeff.element_tensors(mesh)
    lam, _ = coeff.eig_bounds(mesh)
    if np.any(lam <= 0):
        raise ValueError("coefficient is not positive definite")
    rule = pq.quad_tri(2 * k)
    _, dphi = space.basis_at(rule.points)
    w = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    Kloc = np.einsum("tq,tqid,tde,tqje->tij", w, dphi, A, dphi)

    lrule = pq.quad_tri(load_degree(k))
    phi, _ = space.basis_at(lrule.points)
    x = pq.element_points(mesh.coords, lrule.points)
    wl = 2.0 * mesh.areas[:, None] * lrule.weights[None, :]
    fv = np.broadcast_to(f(x[..., 0], x[..., 1]), wl.shape)
    bloc = np.einsum("tq,tq,tql->tl", wl, fv, phi)

    nF = mesh.neumann_edges
    if len(nF):
        if g is None:
            raise ValueError("Neumann edges present but no Neumann data g given")
        bloc -= _neumann_local(space, nF, g)

    n = space.n_dofs
    edofs = space.element_dofs
    M = _coo(edofs, Kloc, n)
    b = np.bincount(edofs.ravel(), weights=bloc.ravel(), minlength=n)

    fixed = space.dirichlet_dofs
    if u_D is None or len(fixed) == 0:
        vals = np.zeros(len(fixed))
    else:
        vals = dirichlet_moments(mesh, mesh.dirichlet_edges, k, u_D).ravel()
    return LinearSystem(M, b, fixed, vals, Kloc, bloc, edofs)


def _neumann_local(space: NCSpace, nF, g) -> np.ndarray:
    """<g, phi_l>_F contributions for Neumann edges, scattered into local rows."""
    mesh, k = space.mesh, space.k
    rule = pq.quad_edge(load_degree(k))
    K = mesh.edge_elements[nF, 0]
    li = np.array([mesh.local_edge(Ki, Fi) for Ki, Fi in zip(K, nF)])
    phi, _ = space.basis_on_edges(rule.points, K, li)
    x = edge_points(mesh, nF, rule.points)
    gv = np.broadcast_to(g(x[..., 0], x[..., 1]), x.shape[:-1])
    w = 0.5 * mesh.edge_lengths[nF][:, None] * rule.weights
    contrib = np.einsum("fq,fq,fql->fl", w, gv, phi)
    out = np.zeros((mesh.n_elements, space.n_local))
    np.add.at(out, K, contrib)
    return out


def solve(system: LinearSystem, space: NCSpace, coeff: Coefficient, **solver_opts) -> NCSolution:
    A, rhs, free, u = system.reduced()
    if A.shape[0]:
        u[free] = solve_spd(A, rhs, **solver_opts)
    return NCSolution(space, u, coeff, system)


def solve_problem(mesh: Mesh, coeff: Coefficient, f, g=None, u_D=None, k: int = 1, **solver_opts) -> NCSolution:
    space = NCSpace(mesh, k)
    system = assemble(mesh, coeff, f, g, u_D, space)
    return solve(system, space, coeff, **solver_opts)


def write_solution(path, sol) -> None:
    """Text dump: tag line, mesh checksum, order, dof count, one value per line."""
    tag = "dgsol v1" if getattr(sol, "is_dg", False) else "ncsol v1"
    lines = [tag, f"mesh {sol.mesh.checksum}", f"k {sol.k}", f"ndof {len(sol.values)}"]
    lines += [repr(float(v)) for v in sol.values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_solution_values(path, mesh: Mesh | None = None):
    with open(path) as fh:
        rows = [ln.strip() for ln in fh if ln.strip()]
    if rows[0] not in ("ncsol v1", "dgsol v1"):
        raise ValueError("not a solution dump")
    checksum = rows[1].split()[1]
    if mesh is not None and checksum != mesh.checksum:
        raise ValueError("solution dump does not belong to this mesh")
    k = int(rows[2].split()[1])
    n = int(rows[3].split()[1])
    vals = np.array([float(v) for v in rows[4:4 + n]])
    return rows[0], k, vals
