"""Explicit flux recovery into Raviart-Thomas and gradient recovery into Nedelec spaces.

Both recovered fields are stored through their degrees of freedom: ``k``
moments per edge against ``L_{j,F}`` (normal component for RT, tangential
for NE, always with the global edge orientation) plus interior moments
against ``P_{k-2}(K)^2``.  Edge moments are single valued, so normal
(resp. tangential) continuity holds by data layout.  Each element then
expands its moments into ``RT_{k-1}(K)`` / ``NE_{k-1}(K)`` for evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import polyquad as pq
from .coefficient import Coefficient
from .mesh import INTERIOR, Mesh
from .nc import edge_points, load_degree


class EquilibrationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# local RT / NE spaces in scaled coordinates
# ---------------------------------------------------------------------------

def local_space_dim(r: int) -> int:
    return (r + 1) * (r + 3)


def vector_basis(xh, h, r: int, kind: str):
    """Values (..., nb, 2) and divergence or curl (..., nb) of the local basis.

    kind "rt": P_r^2 + x P_r~ ;  kind "ne": P_r^2 + (-y, x) P_r~  (P_r~ homogeneous).
    ``h`` broadcasts against ``xh[..., 0]``.
    """
    full, hom = pq.monomials(r), pq.homogeneous(r)
    V = pq.vander(xh, full)
    G = pq.vander_grad(xh, full, h)
    W = pq.vander(xh, hom)
    nf = len(full)
    shape = xh.shape[:-1]
    val = np.zeros(shape + (2 * nf + len(hom), 2))
    der = np.zeros(shape + (2 * nf + len(hom),))
    val[..., :nf, 0] = V
    val[..., nf:2 * nf, 1] = V
    hinv = 1.0 / np.asarray(h, dtype=float)[..., None]
    if kind == "rt":
        val[..., 2 * nf:, 0] = xh[..., 0, None] * W
        val[..., 2 * nf:, 1] = xh[..., 1, None] * W
        der[..., :nf] = G[..., 0]
        der[..., nf:2 * nf] = G[..., 1]
        der[..., 2 * nf:] = (2 + r) * W * hinv
    elif kind == "ne":
        val[..., 2 * nf:, 0] = -xh[..., 1, None] * W
        val[..., 2 * nf:, 1] = xh[..., 0, None] * W
        der[..., :nf] = -G[..., 1]
        der[..., nf:2 * nf] = G[..., 0]
        der[..., 2 * nf:] = (2 + r) * W * hinv
    else:
        raise ValueError(kind)
    return val, der


def _interior_test(xh, k):
    """Vector test functions P_{k-2}^2 as (..., 2 m, 2)."""
    P = pq.vander(xh, pq.monomials(k - 2))
    m = P.shape[-1]
    Z = np.zeros(xh.shape[:-1] + (2 * m, 2))
    Z[..., :m, 0] = P
    Z[..., m:, 1] = P
    return Z


def _edge_direction(mesh: Mesh, kind: str):
    return mesh.normals if kind == "rt" else mesh.tangents


def local_dof_matrix(mesh: Mesh, k: int, kind: str) -> np.ndarray:
    """(nT, nb, nb): DOF functionals applied to the local vector basis."""
    r = k - 1
    rule = pq.quad_edge(2 * k + 2)
    Lt = pq.legendre_table(k - 1, rule.points)
    F = mesh.tri_edges
    x = edge_points(mesh, F, rule.points)
    xh = (x - mesh.centers[:, None, None, :]) / mesh.diameters[:, None, None, None]
    val, _ = vector_basis(xh, mesh.diameters[:, None, None], r, kind)
    d = _edge_direction(mesh, kind)[F]                       # (nT, 3, 2)
    w = 0.5 * mesh.edge_lengths[F][..., None] * rule.weights
    D_edge = np.einsum("tiq,qj,tiqbd,tid->tijb", w, Lt, val, d).reshape(mesh.n_elements, 3 * k, -1)
    if k < 2:
        return D_edge
    trule = pq.quad_tri(2 * k)
    xe = pq.element_points(mesh.coords, trule.points)
    xh = pq.scaled(xe, mesh.centers, mesh.diameters)
    val, _ = vector_basis(xh, mesh.diameters[:, None], r, kind)
    Z = _interior_test(xh, k)
    wt = 2.0 * mesh.areas[:, None] * trule.weights[None, :]
    D_int = np.einsum("tq,tqzd,tqbd->tzb", wt, Z, val)
    return np.concatenate([D_edge, D_int], axis=1)


@dataclass(eq=False)
class VectorField:
    """Piecewise RT_{k-1} (kind "rt") or NE_{k-1} (kind "ne") field."""

    mesh: Mesh
    k: int
    kind: str
    edge_moments: np.ndarray       # (nE, k)
    interior_moments: np.ndarray   # (nT, 2 dim P_{k-2})

    @cached_property
    def coef(self) -> np.ndarray:
        D = local_dof_matrix(self.mesh, self.k, self.kind)
        rhs = self.edge_moments[self.mesh.tri_edges].reshape(self.mesh.n_elements, -1)
        if self.interior_moments.shape[1]:
            rhs = np.concatenate([rhs, self.interior_moments], axis=1)
        return np.linalg.solve(D, rhs[..., None])[..., 0]

    def _basis(self, x, elements):
        m = self.mesh
        xh = (x - m.centers[elements][:, None, :]) / m.diameters[elements][:, None, None]
        return vector_basis(xh, m.diameters[elements][:, None], self.k - 1, self.kind)

    def values_at(self, bary, elements=None):
        idx = np.arange(self.mesh.n_elements) if elements is None else np.asarray(elements)
        x = pq.element_points(self.mesh.coords[idx], bary)
        val, _ = self._basis(x, idx)
        return np.einsum("tqbd,tb->tqd", val, self.coef[idx])

    def derivative_at(self, bary, elements=None):
        """Divergence (rt) or scalar curl (ne) at barycentric points."""
        idx = np.arange(self.mesh.n_elements) if elements is None else np.asarray(elements)
        x = pq.element_points(self.mesh.coords[idx], bary)
        _, der = self._basis(x, idx)
        return np.einsum("tqb,tb->tq", der, self.coef[idx])

    def trace(self, elements, F, s):
        """Field of ``elements`` evaluated on edges F at parameters s, (n, nq, 2)."""
        x = edge_points(self.mesh, F, s)
        val, _ = self._basis(x, np.asarray(elements))
        return np.einsum("fqbd,fb->fqd", val, self.coef[elements])

    def component_on_edges(self, elements, F, s):
        d = _edge_direction(self.mesh, self.kind)[F]
        return np.einsum("fqd,fd->fq", self.trace(elements, F, s), d)


RTField = VectorField
NEField = VectorField


# ---------------------------------------------------------------------------
# helpers on discrete solutions (NC or DG): anything with mesh, k, exps, coef
# ---------------------------------------------------------------------------

def _grad_on_edges(sol, elements, F, s):
    m = sol.mesh
    x = edge_points(m, F, s)
    xh = (x - m.centers[elements][:, None, :]) / m.diameters[elements][:, None, None]
    G = pq.vander_grad(xh, sol.exps, m.diameters[elements][:, None])
    return np.einsum("fqmd,fm->fqd", G, sol.coef[elements])


def _value_on_edges(sol, elements, F, s):
    m = sol.mesh
    x = edge_points(m, F, s)
    xh = (x - m.centers[elements][:, None, :]) / m.diameters[elements][:, None, None]
    V = pq.vander(xh, sol.exps)
    return np.einsum("fqm,fm->fq", V, sol.coef[elements])


def _interior_moments(mesh: Mesh, k: int, field_at):
    """int_K v . zeta for zeta in P_{k-2}^2, with v given at quad points."""
    if k < 2:
        return np.zeros((mesh.n_elements, 0))
    rule = pq.quad_tri(2 * k)
    xe = pq.element_points(mesh.coords, rule.points)
    Z = _interior_test(pq.scaled(xe, mesh.centers, mesh.diameters), k)
    w = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    return np.einsum("tq,tqzd,tqd->tz", w, Z, field_at(rule.points))


def _neumann_moments(mesh: Mesh, F, k: int, g):
    """int_F g L_j ds (the RT moments of the Neumann data), with the same rule
    as the Neumann term of the load so that equilibration holds to round-off."""
    rule = pq.quad_edge(load_degree(k))
    x = edge_points(mesh, F, rule.points)
    gv = np.broadcast_to(g(x[..., 0], x[..., 1]), x.shape[:-1])
    w = 0.5 * mesh.edge_lengths[F][:, None] * rule.weights
    return np.einsum("fq,fq,qj->fj", w, gv, pq.legendre_table(k - 1, rule.points))


def dirichlet_tangential_moments(mesh: Mesh, F, k: int, u_D):
    """int_F (d u_D / dt) L_j ds, by parts from the values of u_D on F."""
    out = np.zeros((len(F), k))
    if u_D is None or len(F) == 0:
        return out
    rule = pq.quad_edge(20)
    x = edge_points(mesh, F, rule.points)
    vals = u_D(x[..., 0], x[..., 1])
    dL = pq.legendre_deriv_table(k - 1, rule.points)
    a = mesh.vertices[mesh.edges[F, 0]]
    b = mesh.vertices[mesh.edges[F, 1]]
    us, ue = u_D(a[:, 0], a[:, 1]), u_D(b[:, 0], b[:, 1])
    sign = (-1.0) ** np.arange(k)
    return ue[:, None] - us[:, None] * sign[None, :] - np.einsum("fq,q,qj->fj", vals, rule.weights, dL)


# ---------------------------------------------------------------------------
# recoveries
# ---------------------------------------------------------------------------

def recover_flux(sol, g=None, check_tol: float = 1e-9) -> VectorField:
    """Equilibrated flux of a nonconforming solution in RT_{k-1}.

    Edge moments are ``mu_K(F) ||L_j||^2 (int_K sigma~ . grad phi_{j,F} + int_K f phi_{j,F})``,
    computed from both neighbours and compared; Neumann edges take the moments of g.
    ``check_tol`` bounds the disagreement relative to the largest local value.
    """
    mesh, k = sol.mesh, sol.k
    R = sol.residuals()[:, :3 * k].reshape(mesh.n_elements, 3, k)
    norm2 = pq.edge_norm_sq(np.arange(k)[None, None, :], mesh.edge_lengths[mesh.tri_edges][..., None])
    local = mesh.tri_signs[..., None] * norm2 * R                 # (nT, 3, k)

    moments = np.zeros((mesh.n_edges, k))
    from_minus = np.zeros((mesh.n_edges, k))
    from_plus = np.zeros((mesh.n_edges, k))
    minus = mesh.tri_signs == 1
    from_minus[mesh.tri_edges[minus]] = local[minus]
    from_plus[mesh.tri_edges[~minus]] = local[~minus]
    interior = mesh.boundary_tag == INTERIOR
    # Both sides agree in exact arithmetic.  Taking the moment from the side
    # with the smaller coefficient leaves that element exactly equilibrated
    # and hands the round-off of the larger side to the element whose scale
    # matches it.
    _, Lam = sol.coefficient.eig_bounds(mesh)
    km, kp = mesh.edge_elements[:, 0], mesh.edge_elements[:, 1]
    use_plus = interior & (Lam[np.maximum(kp, 0)] < Lam[km])
    moments[:] = np.where(use_plus[:, None], from_plus, from_minus)

    scale = np.abs(local).max() if local.size else 1.0
    if scale > 0 and interior.any():
        gap = np.abs(from_minus[interior] - from_plus[interior]).max() / scale
        if gap > check_tol:
            raise EquilibrationError(f"flux moments from K^- and K^+ differ by {gap:.3e} (relative); "
                                     "the discrete problem was not solved accurately")
    nF = mesh.neumann_edges
    if len(nF):
        if g is None:
            raise ValueError("Neumann edges present but no Neumann data g given")
        moments[nF] = _neumann_moments(mesh, nF, k, g)

    inter = _interior_moments(mesh, k, sol.flux_at)
    return VectorField(mesh, k, "rt", moments, inter)


def recover_gradient(sol, coeff: Coefficient | None = None, u_D=None) -> VectorField:
    """Weighted edge averages of the tangential traces of grad_h u into NE_{k-1}.

    Interior edges use theta_F = Lam^- / (Lam^- + Lam^+); Dirichlet edges take
    the tangential derivative of the boundary data (zero for homogeneous
    data); Neumann edges are one-sided.
    """
    mesh, k = sol.mesh, sol.k
    coeff = coeff if coeff is not None else sol.coefficient
    ed = coeff.edge_data(mesh)
    rule = pq.quad_edge(2 * k + 2)
    Lt = pq.legendre_table(k - 1, rule.points)
    t = mesh.tangents
    w = 0.5 * mesh.edge_lengths[:, None] * rule.weights
    Fall = np.arange(mesh.n_edges)
    km = mesh.edge_elements[:, 0]
    gm = _grad_on_edges(sol, km, Fall, rule.points)
    Sm = np.einsum("fq,fqd,fd,qj->fj", w, gm, t, Lt)
    S = Sm.copy()
    inner = mesh.interior_edges
    if len(inner):
        kp = mesh.edge_elements[inner, 1]
        gp = _grad_on_edges(sol, kp, inner, rule.points)
        Sp = np.einsum("fq,fqd,fd,qj->fj", w[inner], gp, t[inner], Lt)
        th = ed.theta[inner][:, None]
        S[inner] = th * Sm[inner] + (1.0 - th) * Sp
    dF = mesh.dirichlet_edges
    S[dF] = dirichlet_tangential_moments(mesh, dF, k, u_D)
    inter = _interior_moments(mesh, k, sol.grad_at)
    return VectorField(mesh, k, "ne", S, inter)


def recover_flux_dg(dgsol, g=None) -> VectorField:
    """RT_0 flux of a k=1 SIPG solution from its numerical trace.

    On interior and Dirichlet edges the normal moment is
    ``int_F -{A grad u . n_F}_w + gamma alpha_H / h_F [[u]] ds``, the flux the
    scheme itself uses, which makes the field equilibrated; Neumann edges
    take the moment of g.
    """
    mesh, k = dgsol.mesh, dgsol.k
    if k != 1:
        raise NotImplementedError("DG flux recovery is implemented for k = 1")
    A = dgsol.coefficient.element_tensors(mesh)
    ed = dgsol.coefficient.edge_data(mesh)
    rule = pq.quad_edge(4)
    s = rule.points
    n = mesh.normals
    w = 0.5 * mesh.edge_lengths[:, None] * rule.weights
    Fall = np.arange(mesh.n_edges)
    km = mesh.edge_elements[:, 0]
    kp = np.where(mesh.edge_elements[:, 1] >= 0, mesh.edge_elements[:, 1], km)
    um = _value_on_edges(dgsol, km, Fall, s)
    up = _value_on_edges(dgsol, kp, Fall, s)
    qm = np.einsum("fde,fqe,fd->fq", A[km], _grad_on_edges(dgsol, km, Fall, s), n)
    qp = np.einsum("fde,fqe,fd->fq", A[kp], _grad_on_edges(dgsol, kp, Fall, s), n)
    interior = (mesh.boundary_tag == INTERIOR)[:, None]
    avg = np.where(interior, ed.w_minus[:, None] * qm + ed.w_plus[:, None] * qp, qm)
    jump = np.where(interior, um - up, um)
    pen = dgsol.gamma * ed.alpha_H / mesh.edge_lengths
    trace = -avg + pen[:, None] * jump
    moments = np.einsum("fq,fq->f", w, trace)[:, None]
    dF = mesh.dirichlet_edges
    if dgsol.u_D is not None and len(dF):
        # same rule as the Nitsche data term of the load
        drule = pq.quad_edge(20)
        x = edge_points(mesh, dF, drule.points)
        ud = np.einsum("fq,q->f", dgsol.u_D(x[..., 0], x[..., 1]), drule.weights) * 0.5 * mesh.edge_lengths[dF]
        moments[dF, 0] -= pen[dF] * ud
    nF = mesh.neumann_edges
    if len(nF):
        if g is None:
            raise ValueError("Neumann edges present but no Neumann data g given")
        moments[nF] = _neumann_moments(mesh, nF, 1, g)
    return VectorField(mesh, 1, "rt", moments, np.zeros((mesh.n_elements, 0)))


# ---------------------------------------------------------------------------
# checkers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HdivReport:
    max_normal_jump: float
    max_div_defect: float
    max_neumann_defect: float


@dataclass(frozen=True)
class HcurlReport:
    max_tangential_jump: float
    max_dirichlet_trace: float


def _edge_jump(field: VectorField, s):
    mesh = field.mesh
    inner = mesh.interior_edges
    if len(inner) == 0:
        return 0.0
    cm = field.component_on_edges(mesh.edge_elements[inner, 0], inner, s)
    cp = field.component_on_edges(mesh.edge_elements[inner, 1], inner, s)
    return float(np.abs(cm - cp).max())


def _field_scale(field: VectorField) -> float:
    rule = pq.quad_tri(2 * field.k)
    v = field.values_at(rule.points)
    return float(np.abs(v).max()) if v.size else 0.0


def check_hdiv(field: VectorField, f, g=None, sol=None) -> HdivReport:
    """Conformity and equilibration defects of a recovered flux.

    Normal jumps are relative to max |sigma|.  The divergence defect on K is
    ``||div sigma - f_{k-1}||_K / (||f_{k-1}||_K + (||sigma||_K + |K|^{1/2} c_K) / h_K)``
    where, when the discrete solution ``sol`` is passed, ``c_K = Lam_K max_K |u_h| / h_K``
    is the flux magnitude whose cancellation produces the edge moments (the
    floating-point conditioning of the local residuals); otherwise c_K = 0.  The
    Neumann defect on F is ``||sigma.n - g_{k-1}||_F / (||g_{k-1}||_F + ||sigma.n||_F)``
    with g_{k-1} the L2(F) projection of g.
    """
    mesh, k = field.mesh, field.k
    erule = pq.quad_edge(2 * k + 2)
    scale = _field_scale(field)
    jump = _edge_jump(field, erule.points) / scale if scale > 0 else 0.0

    deg = load_degree(k)
    rule = pq.quad_tri(deg)
    coef = pq.project_f(f, mesh.coords, k - 1, degree=deg)
    x = pq.element_points(mesh.coords, rule.points)
    Pf = np.einsum("tqm,tm->tq", pq.vander(pq.scaled(x, mesh.centers, mesh.diameters), pq.monomials(k - 1)), coef)
    div = field.derivative_at(rule.points)
    w = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    defect = np.sqrt(np.einsum("tq,tq->t", w, (div - Pf) ** 2))
    sig = field.values_at(rule.points)
    cond = np.zeros(mesh.n_elements)
    if sol is not None:
        _, Lam = sol.coefficient.eig_bounds(mesh)
        cond = np.sqrt(mesh.areas) * Lam * np.abs(sol.values_at(rule.points)).max(axis=1) / mesh.diameters
    ref = (np.sqrt(np.einsum("tq,tq->t", w, Pf**2))
           + (np.sqrt(np.einsum("tq,tqd->t", w, sig**2)) + cond) / mesh.diameters)
    div_defect = float(np.max(defect / np.where(ref > 0, ref, 1.0)))

    neu = 0.0
    nF = mesh.neumann_edges
    if len(nF):
        # compare against the L2(F) projection of g onto P_{k-1}(F)
        sn = field.component_on_edges(mesh.edge_elements[nF, 0], nF, erule.points)
        h = mesh.edge_lengths[nF][:, None]
        Pg = _neumann_moments(mesh, nF, k, g) / pq.edge_norm_sq(np.arange(k)[None, :], h)
        Lt = pq.legendre_table(k - 1, erule.points)
        gv = Pg @ Lt.T
        we = 0.5 * h * erule.weights
        d = np.sqrt(np.einsum("fq,fq->f", we, (sn - gv) ** 2))
        ref = np.sqrt(np.einsum("fq,fq->f", we, gv**2)) + np.sqrt(np.einsum("fq,fq->f", we, sn**2))
        neu = float(np.max(d / np.where(ref > 0, ref, 1.0)))
    return HdivReport(jump, div_defect, neu)


def check_hcurl(field: VectorField, u_D=None) -> HcurlReport:
    """Tangential jumps (relative to max |rho|) and the Dirichlet trace defect.

    With homogeneous data the Dirichlet defect is max |rho . t| on Gamma_D;
    otherwise it is the largest mismatch between the stored tangential
    moments and those of d u_D / dt.
    """
    mesh, k = field.mesh, field.k
    erule = pq.quad_edge(2 * k + 2)
    scale = _field_scale(field)
    jump = _edge_jump(field, erule.points) / scale if scale > 0 else 0.0
    dF = mesh.dirichlet_edges
    dtrace = 0.0
    if len(dF):
        if u_D is None:
            dtrace = float(np.abs(field.component_on_edges(mesh.edge_elements[dF, 0], dF, erule.points)).max())
        else:
            target = dirichlet_tangential_moments(mesh, dF, k, u_D)
            dtrace = float(np.abs(field.edge_moments[dF] - target).max())
    return HcurlReport(jump, dtrace)


# ---------------------------------------------------------------------------
# text dumps
# ---------------------------------------------------------------------------

def write_field(path, field: VectorField) -> None:
    tag = "rtfield v1" if field.kind == "rt" else "nefield v1"
    lines = [tag, f"mesh {field.mesh.checksum}", f"k {field.k}", f"edges {field.mesh.n_edges}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in field.edge_moments]
    lines.append(f"elements {field.mesh.n_elements}")
    lines += [" ".join(repr(float(v)) for v in row) for row in field.coef]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field_moments(path, mesh: Mesh | None = None):
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip()]
    tag = " ".join(rows[0])
    if tag not in ("rtfield v1", "nefield v1"):
        raise ValueError("not a field dump")
    if mesh is not None and rows[1][1] != mesh.checksum:
        raise ValueError("field dump does not belong to this mesh")
    nE = int(rows[3][1])
    edge = np.array([[float(v) for v in r] for r in rows[4:4 + nE]])
    nT = int(rows[4 + nE][1])
    coef = np.array([[float(v) for v in r] for r in rows[5 + nE:5 + nE + nT]])
    return tag, int(rows[2][1]), edge, coef
