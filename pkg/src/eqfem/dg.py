"""Symmetric interior penalty DG (k = 1) with coefficient-weighted averages.

On an edge F with neighbours K^- (outward normal n_F) and K^+:
``[[v]] = v^- - v^+`` and ``{q}_w = w^- q^- + w^+ q^+`` with
``w^- = lam^+ / (lam^- + lam^+)``; on a boundary edge ``[[v]] = v^-`` and
``{q}_w = q^-``.  The penalty is ``gamma alpha_H / h_F``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import polyquad as pq
from .coefficient import Coefficient
from .mesh import INTERIOR, NEUMANN, Mesh
from .nc import LinearSystem, edge_points, load_degree
from .solvers import NotPositiveDefiniteError, solve_spd

DEFAULT_GAMMA = 10.0


class PenaltyError(NotPositiveDefiniteError):
    pass


@dataclass(eq=False)
class DGSpace:
    mesh: Mesh
    k: int = 1

    def __post_init__(self):
        if self.k != 1:
            raise pq.UnsupportedOrderError("the DG discretisation is implemented for k = 1 only")

    @cached_property
    def exps(self) -> np.ndarray:
        return pq.monomials(self.k)

    @property
    def n_local(self) -> int:
        return len(self.exps)

    @property
    def n_dofs(self) -> int:
        return self.n_local * self.mesh.n_elements

    @cached_property
    def element_dofs(self) -> np.ndarray:
        return np.arange(self.n_dofs).reshape(self.mesh.n_elements, self.n_local)

    def on_edges(self, elements, F, s):
        """Basis values (n, nq, nloc) and gradients (n, nq, nloc, 2) on edges F seen from ``elements``."""
        m = self.mesh
        x = edge_points(m, F, s)
        xh = (x - m.centers[elements][:, None, :]) / m.diameters[elements][:, None, None]
        return pq.vander(xh, self.exps), pq.vander_grad(xh, self.exps, m.diameters[elements][:, None])


def suggest_gamma(coeff: Coefficient, mesh: Mesh, base: float = DEFAULT_GAMMA) -> float:
    """``base`` times the largest anisotropy ratio Lam_K / lam_K.

    The penalty is built from the smallest eigenvalue while the consistency
    terms see the whole tensor, so anisotropic data needs a larger gamma.
    """
    lam, Lam = coeff.eig_bounds(mesh)
    return float(base * np.max(Lam / lam))


def _coo(rows, cols, vals, n):
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))


def assemble_sipg(mesh: Mesh, coeff: Coefficient, f, g=None, u_D=None, gamma: float = DEFAULT_GAMMA,
                  space: DGSpace | None = None) -> LinearSystem:
    """SIPG matrix and load ``(f, v) - <g, v>_N`` plus Nitsche terms for u_D."""
    if not gamma > 0:
        raise ValueError("penalty parameter gamma must be positive")
    space = space if space is not None else DGSpace(mesh)
    k, n = space.k, space.n_dofs
    A = coeff.element_tensors(mesh)
    ed = coeff.edge_data(mesh)
    edofs = space.element_dofs

    # volume terms
    rule = pq.quad_tri(2 * k)
    x = pq.element_points(mesh.coords, rule.points)
    xh = pq.scaled(x, mesh.centers, mesh.diameters)
    dphi = pq.vander_grad(xh, space.exps, mesh.diameters[:, None])
    w = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    Kloc = np.einsum("tq,tqid,tde,tqje->tij", w, dphi, A, dphi)
    Kloc = 0.5 * (Kloc + Kloc.transpose(0, 2, 1))
    lrule = pq.quad_tri(load_degree(k))
    xl = pq.element_points(mesh.coords, lrule.points)
    phi = pq.vander(pq.scaled(xl, mesh.centers, mesh.diameters), space.exps)
    wl = 2.0 * mesh.areas[:, None] * lrule.weights[None, :]
    bloc = np.einsum("tq,tq,tql->tl", wl, np.broadcast_to(f(xl[..., 0], xl[..., 1]), wl.shape), phi)

    rows = [np.broadcast_to(edofs[:, :, None], Kloc.shape)]
    cols = [np.broadcast_to(edofs[:, None, :], Kloc.shape)]
    vals = [Kloc]
    b = np.bincount(edofs.ravel(), weights=bloc.ravel(), minlength=n)

    erule = pq.quad_edge(2 * k + 2)
    s = erule.points
    h = mesh.edge_lengths
    nrm = mesh.normals
    pen = gamma * ed.alpha_H / h

    # interior edges: 2 nloc x 2 nloc blocks
    inner = mesh.interior_edges
    if len(inner):
        km, kp = mesh.edge_elements[inner, 0], mesh.edge_elements[inner, 1]
        vm, gm = space.on_edges(km, inner, s)
        vp, gp = space.on_edges(kp, inner, s)
        qm = np.einsum("fde,fqle,fd->fql", A[km], gm, nrm[inner]) * ed.w_minus[inner, None, None]
        qp = np.einsum("fde,fqle,fd->fql", A[kp], gp, nrm[inner]) * ed.w_plus[inner, None, None]
        J = np.concatenate([vm, -vp], axis=2)
        Q = np.concatenate([qm, qp], axis=2)
        we = 0.5 * h[inner, None] * erule.weights
        C = np.einsum("fq,fqi,fqj->fij", we, J, Q)
        E = -C - C.transpose(0, 2, 1) + pen[inner, None, None] * np.einsum("fq,fqi,fqj->fij", we, J, J)
        d = np.concatenate([edofs[km], edofs[kp]], axis=1)
        rows.append(np.broadcast_to(d[:, :, None], E.shape))
        cols.append(np.broadcast_to(d[:, None, :], E.shape))
        vals.append(E)

    # Dirichlet edges: one-sided with Nitsche data
    dF = mesh.dirichlet_edges
    if len(dF):
        km = mesh.edge_elements[dF, 0]
        vm, gm = space.on_edges(km, dF, s)
        qm = np.einsum("fde,fqle,fd->fql", A[km], gm, nrm[dF])
        we = 0.5 * h[dF, None] * erule.weights
        C = np.einsum("fq,fqi,fqj->fij", we, vm, qm)
        E = -C - C.transpose(0, 2, 1) + pen[dF, None, None] * np.einsum("fq,fqi,fqj->fij", we, vm, vm)
        d = edofs[km]
        rows.append(np.broadcast_to(d[:, :, None], E.shape))
        cols.append(np.broadcast_to(d[:, None, :], E.shape))
        vals.append(E)
        if u_D is not None:
            drule = pq.quad_edge(20)
            vd, gd = space.on_edges(km, dF, drule.points)
            qd = np.einsum("fde,fqle,fd->fql", A[km], gd, nrm[dF])
            xd = edge_points(mesh, dF, drule.points)
            ud = u_D(xd[..., 0], xd[..., 1])
            wd = 0.5 * h[dF, None] * drule.weights
            contrib = np.einsum("fq,fq,fql->fl", wd, ud, -qd + pen[dF, None, None] * vd)
            np.add.at(b, d.ravel(), contrib.ravel())

    nF = mesh.neumann_edges
    if len(nF):
        if g is None:
            raise ValueError("Neumann edges present but no Neumann data g given")
        km = mesh.edge_elements[nF, 0]
        nrule = pq.quad_edge(load_degree(k))
        vn, _ = space.on_edges(km, nF, nrule.points)
        xn = edge_points(mesh, nF, nrule.points)
        gv = np.broadcast_to(g(xn[..., 0], xn[..., 1]), xn.shape[:-1])
        wn = 0.5 * h[nF, None] * nrule.weights
        np.add.at(b, edofs[km].ravel(), -np.einsum("fq,fq,fql->fl", wn, gv, vn).ravel())

    M = _coo(np.concatenate([r.ravel() for r in rows]), np.concatenate([c.ravel() for c in cols]),
             np.concatenate([v.ravel() for v in vals]), n)
    return LinearSystem(M, b, np.zeros(0, dtype=int), np.zeros(0), Kloc, bloc, edofs)


@dataclass(eq=False)
class DGSolution:
    space: DGSpace
    values: np.ndarray
    coefficient: Coefficient
    system: LinearSystem | None = None
    u_D: object = None
    gamma: float = DEFAULT_GAMMA
    is_dg = True

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    @property
    def k(self) -> int:
        return self.space.k

    @property
    def exps(self):
        return self.space.exps

    @cached_property
    def coef(self) -> np.ndarray:
        return self.values.reshape(self.mesh.n_elements, self.space.n_local)

    def values_at(self, bary, elements=None):
        m = self.mesh
        idx = slice(None) if elements is None else elements
        x = pq.element_points(m.coords[idx], bary)
        V = pq.vander(pq.scaled(x, m.centers[idx], m.diameters[idx]), self.exps)
        return np.einsum("tqm,tm->tq", V, self.coef[idx])

    def grad_at(self, bary, elements=None):
        m = self.mesh
        idx = slice(None) if elements is None else elements
        x = pq.element_points(m.coords[idx], bary)
        G = pq.vander_grad(pq.scaled(x, m.centers[idx], m.diameters[idx]), self.exps, m.diameters[idx][:, None])
        return np.einsum("tqmd,tm->tqd", G, self.coef[idx])

    def flux_at(self, bary, elements=None):
        A = self.coefficient.element_tensors(self.mesh)
        idx = slice(None) if elements is None else elements
        return -np.einsum("tde,tqe->tqd", A[idx], self.grad_at(bary, elements))


def solve_dg(system: LinearSystem, space: DGSpace, coeff: Coefficient, u_D=None, gamma: float = DEFAULT_GAMMA,
             **solver_opts) -> DGSolution:
    try:
        u = solve_spd(system.matrix, system.load, **solver_opts)
    except NotPositiveDefiniteError as exc:
        raise PenaltyError(f"SIPG matrix is not positive definite for gamma={gamma}; "
                           f"increase the penalty parameter ({exc})", exc.history) from exc
    return DGSolution(space, u, coeff, system, u_D, gamma)


def solve_dg_problem(mesh: Mesh, coeff: Coefficient, f, g=None, u_D=None, gamma: float = DEFAULT_GAMMA,
                     **solver_opts) -> DGSolution:
    space = DGSpace(mesh)
    system = assemble_sipg(mesh, coeff, f, g, u_D, gamma, space)
    return solve_dg(system, space, coeff, u_D, gamma, **solver_opts)


def recover_gradient_dg(dgsol: DGSolution, coeff: Coefficient | None = None):
    """Nedelec gradient recovery applied to grad_h of the DG solution."""
    from .recovery import recover_gradient
    return recover_gradient(dgsol, coeff, u_D=dgsol.u_D)


def jump_seminorm(dgsol: DGSolution) -> float:
    """sum over interior and Dirichlet edges of h_F^{-1} ||[[u]]||_F^2 (u - u_D on Gamma_D)."""
    mesh, space = dgsol.mesh, dgsol.space
    rule = pq.quad_edge(4)
    Fs = np.flatnonzero(mesh.boundary_tag != NEUMANN)
    km = mesh.edge_elements[Fs, 0]
    kp = mesh.edge_elements[Fs, 1]
    vm, _ = space.on_edges(km, Fs, rule.points)
    um = np.einsum("fql,fl->fq", vm, dgsol.coef[km])
    interior = mesh.boundary_tag[Fs] == INTERIOR
    other = np.zeros_like(um)
    if interior.any():
        vp, _ = space.on_edges(kp[interior], Fs[interior], rule.points)
        other[interior] = np.einsum("fql,fl->fq", vp, dgsol.coef[kp[interior]])
    if dgsol.u_D is not None and (~interior).any():
        x = edge_points(mesh, Fs[~interior], rule.points)
        other[~interior] = dgsol.u_D(x[..., 0], x[..., 1])
    h = mesh.edge_lengths[Fs]
    w = 0.5 * h[:, None] * rule.weights
    return float(np.sum(np.einsum("fq,fq->f", w, (um - other) ** 2) / h))
