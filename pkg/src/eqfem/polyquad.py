"""Polynomials, quadrature rules and L2 projections on triangles and edges.

Local polynomials are stored in a scaled monomial basis
``((x - c_K) / h_K)**a * ((y - c_K) / h_K)**b`` with ``a + b <= p``, where
``c_K`` is the centroid and ``h_K`` the diameter of the element.  Everything
here is vectorised over elements: point arrays carry a leading element axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import roots_jacobi

MAX_DEGREE = 25


class UnsupportedOrderError(ValueError):
    pass


@dataclass(frozen=True)
class QuadRule:
    """Quadrature rule on a reference cell.

    For triangles ``points`` are barycentric ``(n, 3)`` and the weights sum to
    the reference area 1/2.  For edges ``points`` are the affine parameter
    ``s`` in [-1, 1] and the weights sum to 2.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def quad_edge(degree: int) -> QuadRule:
    if degree < 0 or degree > MAX_DEGREE:
        raise ValueError(f"unsupported edge quadrature degree {degree}")
    n = degree // 2 + 1
    s, w = npleg.leggauss(n)
    return QuadRule(s, w, degree)


@lru_cache(maxsize=None)
def quad_tri(degree: int) -> QuadRule:
    """Conical product (collapsed Gauss-Jacobi x Gauss-Legendre) rule.

    All points are strictly inside the triangle, which matters when the
    integrand is singular at a vertex.
    """
    if degree < 0 or degree > MAX_DEGREE:
        raise ValueError(f"unsupported triangle quadrature degree {degree}")
    n = degree // 2 + 1
    # weight (1-u) on [0,1] from Jacobi(alpha=1, beta=0) on [-1,1]
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    u = 0.5 * (xj + 1.0)
    wu = wj / 4.0
    xl, wl = npleg.leggauss(n)
    v = 0.5 * (xl + 1.0)
    wv = wl / 2.0
    U, V = np.meshgrid(u, v, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    w = np.outer(wu, wv).ravel()
    bary = np.column_stack([1.0 - x - y, x, y])
    return QuadRule(bary, w, degree)


def graded_vertex_rule(n_radial: int = 20, n_angular: int = 16, grading: int = 10):
    """Collapsed rule for integrands singular at local vertex 0.

    Returns ``(bary, w)`` for the reference triangle (weights sum to 1/2).
    The radial coordinate is ``t**grading`` so that ``r**beta`` integrands
    with small ``beta`` become smooth in ``t``.
    """
    tl, wt = npleg.leggauss(n_radial)
    t = 0.5 * (tl + 1.0)
    wt = 0.5 * wt
    sl, ws = npleg.leggauss(n_angular)
    s = 0.5 * (sl + 1.0)
    ws = 0.5 * ws
    T, S = np.meshgrid(t, s, indexing="ij")
    rho = T**grading
    # x = v0 + rho * ((1-s) e1 + s e2), dx = 2|K| rho drho ds
    l1 = rho * (1.0 - S)
    l2 = rho * S
    jac = grading * T ** (grading - 1) * rho
    w = (np.outer(wt, ws) * jac).ravel()
    bary = np.column_stack([1.0 - l1.ravel() - l2.ravel(), l1.ravel(), l2.ravel()])
    return bary, w


# ---------------------------------------------------------------------------
# Legendre polynomials on edges
# ---------------------------------------------------------------------------

def legendre(j: int, s):
    """Legendre polynomial P_j at the affine edge parameter s (recurrence)."""
    s = np.asarray(s, dtype=float)
    p0 = np.ones_like(s)
    if j == 0:
        return p0
    p1 = s.copy()
    for n in range(1, j):
        p0, p1 = p1, ((2 * n + 1) * s * p1 - n * p0) / (n + 1)
    return p1


def legendre_table(nmax: int, s) -> np.ndarray:
    """Values of P_0..P_nmax at s, shape ``s.shape + (nmax + 1,)``."""
    return npleg.legvander(np.asarray(s, dtype=float), nmax)


def legendre_deriv_table(nmax: int, s) -> np.ndarray:
    """d/ds of P_0..P_nmax at s."""
    s = np.asarray(s, dtype=float)
    out = np.empty(s.shape + (nmax + 1,))
    for j in range(nmax + 1):
        c = np.zeros(j + 1)
        c[j] = 1.0
        out[..., j] = npleg.legval(s, npleg.legder(c)) if j > 0 else 0.0
    return out


def edge_parameter(start, end, x, tol: float = 1e-10):
    """Affine parameter s of point x on the segment start->end (s=-1 at start)."""
    start, end, x = (np.asarray(a, dtype=float) for a in (start, end, x))
    d = end - start
    h2 = np.dot(d, d)
    s = 2.0 * np.dot(x - start, d) / h2 - 1.0
    foot = start + 0.5 * (s + 1.0) * d
    if np.linalg.norm(x - foot) > tol * np.sqrt(h2) or abs(s) > 1.0 + tol:
        raise ValueError("point is not on the edge")
    return float(s)


def legendre_edge_eval(j: int, start, end, x) -> float:
    """L_{j,F}(x) for the edge oriented start -> end, L_j(end) = 1."""
    return float(legendre(j, edge_parameter(start, end, x)))


def edge_norm_sq(j: int, h):
    """||L_{j,F}||^2_{0,F} = h_F / (2j + 1)."""
    return np.asarray(h, dtype=float) / (2 * j + 1)


# ---------------------------------------------------------------------------
# scaled monomials
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def monomials(p: int) -> np.ndarray:
    """Exponent pairs (a, b) with a + b <= p, graded order; empty for p < 0."""
    if p < 0:
        return np.zeros((0, 2), dtype=int)
    return np.array([(d - b, b) for d in range(p + 1) for b in range(d + 1)], dtype=int)


@lru_cache(maxsize=None)
def homogeneous(p: int) -> np.ndarray:
    if p < 0:
        return np.zeros((0, 2), dtype=int)
    return np.array([(p - b, b) for b in range(p + 1)], dtype=int)


def dim_poly(p: int) -> int:
    return 0 if p < 0 else (p + 1) * (p + 2) // 2


def _powers(xh, p):
    """xh[..., 2] -> (px, py) with px[..., a] = xh_x**a for a <= p."""
    e = np.arange(p + 1)
    return xh[..., 0, None] ** e, xh[..., 1, None] ** e


def vander(xh, exps) -> np.ndarray:
    """Monomial values at scaled points xh[..., 2]; returns xh.shape[:-1] + (m,)."""
    exps = np.asarray(exps)
    if len(exps) == 0:
        return np.zeros(xh.shape[:-1] + (0,))
    px, py = _powers(xh, int(exps.max()))
    return px[..., exps[:, 0]] * py[..., exps[:, 1]]


def vander_grad(xh, exps, h) -> np.ndarray:
    """Physical gradients of scaled monomials; returns (..., m, 2).

    ``h`` broadcasts against the leading axes of ``xh[..., 0]``.
    """
    exps = np.asarray(exps)
    out = np.zeros(xh.shape[:-1] + (len(exps), 2))
    if len(exps) == 0:
        return out
    p = int(exps.max())
    px, py = _powers(xh, p)
    a, b = exps[:, 0], exps[:, 1]
    am1 = np.maximum(a - 1, 0)
    bm1 = np.maximum(b - 1, 0)
    hinv = 1.0 / np.asarray(h, dtype=float)[..., None]
    out[..., 0] = a * px[..., am1] * py[..., b] * hinv
    out[..., 1] = b * px[..., a] * py[..., bm1] * hinv
    return out


# ---------------------------------------------------------------------------
# element geometry helpers used by every module
# ---------------------------------------------------------------------------

def element_points(coords, bary):
    """Physical points (nT, nq, 2) from element vertex coords (nT, 3, 2)."""
    return np.einsum("qi,tid->tqd", bary, coords)


def scaled(x, centers, diam):
    return (x - centers[:, None, :]) / diam[:, None, None]


def interior_dual_basis(k: int) -> np.ndarray:
    """Exponents of the interior moment polynomials P_{j,K} in scaled monomials.

    k=1 has no interior moments; k=3 has the single constant moment.
    """
    if k % 2 == 0:
        raise UnsupportedOrderError(f"even order k={k} is not supported")
    if k not in (1, 3):
        raise UnsupportedOrderError(f"order k={k} is not supported (k in {{1, 3}})")
    return monomials(k - 3)


# ---------------------------------------------------------------------------
# projection and oscillation
# ---------------------------------------------------------------------------

def project_f(f, coords, p: int, degree: int | None = None):
    """L2 projection of f onto P_p on each element.

    Returns coefficients ``(nT, dim P_p)`` in the scaled monomial basis of each
    element.  ``f`` is called with arrays ``x, y`` of shape (nT, nq).
    """
    coords = np.asarray(coords, dtype=float)
    if p < 0:
        return np.zeros((len(coords), 0))
    rule = quad_tri(degree if degree is not None else 2 * p + 4)
    centers, diam, area = element_geometry(coords)
    x = element_points(coords, rule.points)
    w = 2.0 * area[:, None] * rule.weights[None, :]
    V = vander(scaled(x, centers, diam), monomials(p))
    M = np.einsum("tq,tqi,tqj->tij", w, V, V)
    if np.any(area <= 0.0):
        raise np.linalg.LinAlgError("degenerate triangle in projection")
    rhs = np.einsum("tq,tqi,tq->ti", w, V, f(x[..., 0], x[..., 1]))
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def element_geometry(coords):
    coords = np.asarray(coords, dtype=float)
    centers = coords.mean(axis=1)
    e1 = coords[:, 1] - coords[:, 0]
    e2 = coords[:, 2] - coords[:, 0]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    d = np.stack([np.linalg.norm(coords[:, i] - coords[:, (i + 1) % 3], axis=1) for i in range(3)], axis=1)
    return centers, d.max(axis=1), area


def oscillation(f, coords, lam_min, k: int, degree: int | None = None):
    """Per-element data oscillation h_K lambda_K^{-1/2} ||f - f_{k-1}||_{0,K}."""
    coords = np.asarray(coords, dtype=float)
    deg = degree if degree is not None else 2 * k + 4
    coef = project_f(f, coords, k - 1, degree=deg)
    rule = quad_tri(deg)
    centers, diam, area = element_geometry(coords)
    x = element_points(coords, rule.points)
    w = 2.0 * area[:, None] * rule.weights[None, :]
    V = vander(scaled(x, centers, diam), monomials(k - 1))
    r = f(x[..., 0], x[..., 1]) - np.einsum("tqi,ti->tq", V, coef)
    l2 = np.sqrt(np.maximum(np.einsum("tq,tq->t", w, r * r), 0.0))
    return diam * l2 / np.sqrt(np.asarray(lam_min, dtype=float))
