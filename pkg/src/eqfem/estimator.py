"""Local and global error indicators, the true energy error, and derived ratios."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import polyquad as pq
from .coefficient import Coefficient
from .recovery import VectorField


class MeshMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class IndicatorSet:
    eta_sigma_K: np.ndarray
    eta_rho_K: np.ndarray
    osc_K: np.ndarray

    @property
    def eta_K(self) -> np.ndarray:
        return np.sqrt(self.eta_sigma_K**2 + self.eta_rho_K**2)

    @property
    def eta_sigma(self) -> float:
        return float(np.sqrt(np.sum(self.eta_sigma_K**2)))

    @property
    def eta_rho(self) -> float:
        return float(np.sqrt(np.sum(self.eta_rho_K**2)))

    @property
    def eta(self) -> float:
        return float(np.sqrt(np.sum(self.eta_K**2)))

    @property
    def osc(self) -> float:
        return float(np.sqrt(np.sum(self.osc_K**2)))


def _check_same_mesh(*objs):
    sums = {o.mesh.checksum for o in objs}
    if len(sums) != 1:
        raise MeshMismatchError("fields live on different meshes")


def _weighted_norm(mesh, w, M, v):
    """Per-element ||M v|| with M (nT,2,2) and v (nT,nq,2)."""
    Mv = np.einsum("tde,tqe->tqd", M, v)
    return np.sqrt(np.einsum("tq,tqd->t", w, Mv * Mv))


def indicators(sol, flux: VectorField, grad: VectorField, coeff: Coefficient | None = None, f=None) -> IndicatorSet:
    """eta_{sigma,K} = ||A^{-1/2}(sigma^ - sigma~)||_K and eta_{rho,K} = ||A^{1/2}(rho^ - rho~)||_K.

    The oscillation ``h_K lambda_K^{-1/2} ||f - f_{k-1}||_K`` is filled in when f is given.
    """
    _check_same_mesh(sol, flux, grad)
    coeff = coeff if coeff is not None else sol.coefficient
    mesh, k = sol.mesh, sol.k
    rule = pq.quad_tri(2 * k + 2)
    w = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    A = coeff.element_tensors(mesh)
    sig_t = -np.einsum("tde,tqe->tqd", A, sol.grad_at(rule.points))
    es = _weighted_norm(mesh, w, coeff.inv_sqrt(mesh), flux.values_at(rule.points) - sig_t)
    er = _weighted_norm(mesh, w, coeff.sqrt(mesh), grad.values_at(rule.points) - sol.grad_at(rule.points))
    if f is None:
        osc = np.zeros(mesh.n_elements)
    else:
        lam, _ = coeff.eig_bounds(mesh)
        osc = pq.oscillation(f, mesh.coords, lam, k)
    return IndicatorSet(es, er, osc)


def _discrete_grad(sol, elements, x):
    m = sol.mesh
    xh = (x - m.centers[elements][:, None, :]) / m.diameters[elements][:, None, None]
    G = pq.vander_grad(xh, sol.exps, m.diameters[elements][:, None])
    return np.einsum("tqmd,tm->tqd", G, sol.coef[elements])


def singular_elements(mesh, singular_points, tol: float = 1e-12):
    """Elements with a vertex at one of the points, and that vertex's local index."""
    elems, local = [], []
    pts = np.atleast_2d(np.asarray(singular_points, dtype=float)) if singular_points is not None else np.zeros((0, 2))
    for p in pts:
        d = np.linalg.norm(mesh.coords - p, axis=2)                 # (nT, 3)
        hit = d <= tol * max(1.0, np.abs(p).max())
        K, i = np.nonzero(hit)
        elems.append(K)
        local.append(i)
    if not elems:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return np.concatenate(elems), np.concatenate(local)


def energy_integral(mesh, integrand, singular_points=None, degree: int = 20) -> np.ndarray:
    """Per-element integral of ``integrand(elements, x) -> (n, nq)``.

    Elements touching a singular point use a radially graded collapsed rule
    centred at that vertex; the others use a degree-``degree`` rule.  No rule
    places a point on a vertex.
    """
    out = np.zeros(mesh.n_elements)
    sK, sloc = singular_elements(mesh, singular_points)
    regular = np.setdiff1d(np.arange(mesh.n_elements), sK)
    if len(regular):
        rule = pq.quad_tri(degree)
        x = pq.element_points(mesh.coords[regular], rule.points)
        w = 2.0 * mesh.areas[regular][:, None] * rule.weights[None, :]
        out[regular] = np.einsum("tq,tq->t", w, integrand(regular, x))
    if len(sK):
        bary, wq = pq.graded_vertex_rule()
        # rotate so that the singular vertex is first
        perm = (sloc[:, None] + np.arange(3)[None, :]) % 3
        c = np.take_along_axis(mesh.coords[sK], perm[..., None], axis=1)
        x = np.einsum("qi,tid->tqd", bary, c)
        w = 2.0 * mesh.areas[sK][:, None] * wq[None, :]
        np.add.at(out, sK, np.einsum("tq,tq->t", w, integrand(sK, x)))
    return out


def _finite_gradient(exact_gradient, x):
    g = np.asarray(exact_gradient(x[..., 0], x[..., 1]), dtype=float)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("exact gradient is not finite at a quadrature point")
    return g


def energy_error(sol, exact_gradient, coeff: Coefficient | None = None, singular_points=None, degree: int = 20):
    """Per-element ||A^{1/2} grad_h(u - u_T)||_K and the global value."""
    coeff = coeff if coeff is not None else sol.coefficient
    S = coeff.sqrt(sol.mesh)

    def integrand(elements, x):
        e = _finite_gradient(exact_gradient, x) - _discrete_grad(sol, elements, x)
        return np.sum(np.einsum("tde,tqe->tqd", S[elements], e) ** 2, axis=-1)

    out = energy_integral(sol.mesh, integrand, singular_points, degree)
    return np.sqrt(np.maximum(out, 0.0)), float(np.sqrt(out.sum()))


def energy_norm(mesh, exact_gradient, coeff: Coefficient, singular_points=None, degree: int = 20) -> float:
    """||A^{1/2} grad u|| of an exact solution, integrated on ``mesh``."""
    S = coeff.sqrt(mesh)

    def integrand(elements, x):
        g = _finite_gradient(exact_gradient, x)
        return np.sum(np.einsum("tde,tqe->tqd", S[elements], g) ** 2, axis=-1)

    return float(np.sqrt(energy_integral(mesh, integrand, singular_points, degree).sum()))


def efficiency_index(ind: IndicatorSet | float, error: float) -> float:
    eta = ind.eta if isinstance(ind, IndicatorSet) else float(ind)
    if error == 0.0:
        return 1.0 if eta == 0.0 else float("inf")
    return eta / error


def reliability_ratio(ind: IndicatorSet, error: float) -> float:
    """(||e|| - eta_sigma - osc) / eta_rho: the constant the nonconforming part needs."""
    if ind.eta_rho == 0.0:
        return 0.0
    return (error - ind.eta_sigma - ind.osc) / ind.eta_rho


def local_efficiency_ratio(mesh, ind: IndicatorSet, local_error) -> float:
    """max_K eta_K / (||e||_{omega_K} + osc_K), omega_K = K and its edge neighbours."""
    patch = np.sqrt(mesh.neighbor_sum(np.asarray(local_error) ** 2))
    den = patch + ind.osc_K
    ratio = np.where(den > 0, ind.eta_K / np.where(den > 0, den, 1.0), 0.0)
    return float(ratio.max())
