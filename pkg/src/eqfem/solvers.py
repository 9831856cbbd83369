"""Linear solvers for the symmetric positive definite systems of both schemes."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

DIRECT_LIMIT = 200_000


class SolverError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = [] if history is None else list(history)


class NotPositiveDefiniteError(SolverError):
    pass


def direct_spd(A, b):
    """Sparse LDL^T-equivalent solve; a nonpositive pivot means A is not SPD.

    A symmetric fill-reducing permutation with diagonal pivoting keeps the
    factorisation symmetric, so the diagonal of U holds the LDL^T pivots.
    """
    lu = splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
              options=dict(SymmetricMode=True))
    piv = lu.U.diagonal()
    if not np.array_equal(lu.perm_r, lu.perm_c) or np.any(piv <= 0.0):
        raise NotPositiveDefiniteError(f"matrix is not positive definite ({int(np.sum(piv <= 0))} nonpositive pivots)")
    b = np.asarray(b, dtype=float)
    x = lu.solve(b)
    # iterative refinement until the componentwise backward error stalls
    absA = abs(A)
    best, best_x = np.inf, x
    for _ in range(5):
        r = b - A @ x
        den = absA @ np.abs(x) + np.abs(b)
        omega = np.max(np.abs(r) / np.where(den > 0, den, 1.0))
        if omega >= best:
            break
        best, best_x = omega, x
        if omega <= 4 * np.finfo(float).eps:
            break
        x = x + lu.solve(r)
    return best_x


def pcg(A, b, rtol=1e-10, maxiter=None, x0=None):
    """Jacobi-preconditioned conjugate gradients; returns (x, residual history)."""
    A = sp.csr_matrix(A)
    n = A.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    d = A.diagonal()
    if np.any(d <= 0):
        raise NotPositiveDefiniteError("nonpositive diagonal entry")
    Minv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), [0.0]
    z = Minv * r
    p = z.copy()
    rz = r @ z
    hist = [np.linalg.norm(r) / bnorm]
    for _ in range(maxiter):
        if hist[-1] <= rtol:
            return x, hist
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise NotPositiveDefiniteError("nonpositive curvature in CG", hist)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        hist.append(np.linalg.norm(r) / bnorm)
        z = Minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if hist[-1] <= rtol:
        return x, hist
    raise SolverError(f"CG did not converge in {maxiter} iterations (residual {hist[-1]:.3e})", hist)


def solve_spd(A, b, method: str = "auto", rtol: float = 1e-10, maxiter=None, direct_limit: int = DIRECT_LIMIT):
    """Solve A x = b; direct below ``direct_limit`` unknowns, PCG above.

    The system is first scaled symmetrically to unit diagonal, which removes
    the h-dependence of the basis magnitudes on strongly graded meshes.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(A.data))):
        raise SolverError("system contains non-finite entries")
    n = A.shape[0]
    d = A.diagonal()
    if np.any(d <= 0):
        raise NotPositiveDefiniteError("nonpositive diagonal entry")
    s = 1.0 / np.sqrt(d)
    S = sp.diags(s)
    As = S @ A @ S
    bs = s * b
    if method == "direct" or (method == "auto" and n <= direct_limit):
        y = direct_spd(As, bs)
    elif method in ("cg", "auto"):
        y, _ = pcg(As, bs, rtol=rtol, maxiter=maxiter)
    else:
        raise ValueError(f"unknown solver method {method!r}")
    berr = backward_error(As, y, bs)
    if not berr <= max(rtol, 1e-10):
        raise SolverError(f"solve backward error {berr:.3e} exceeds tolerance")
    return s * y


def backward_error(A, x, b) -> float:
    """Normwise backward error ||A x - b|| / (||A|| ||x|| + ||b||) in the infinity norm."""
    r = np.abs(A @ x - b).max() if len(b) else 0.0
    anorm = abs(sp.csr_matrix(A)).sum(axis=1).max() if len(b) else 0.0
    den = anorm * np.abs(x).max() + np.abs(b).max() if len(b) else 0.0
    return float(r / den) if den > 0 else 0.0
