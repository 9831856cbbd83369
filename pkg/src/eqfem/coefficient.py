"""Piecewise-constant SPD diffusion tensors and the edge weights derived from them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import INTERIOR, Mesh


class CoefficientError(ValueError):
    pass


def _eig2(A):
    """Closed-form eigen-decomposition of symmetric 2x2 tensors (..., 2, 2)."""
    a, b, c = A[..., 0, 0], A[..., 0, 1], A[..., 1, 1]
    mean = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    lo, hi = mean - rad, mean + rad
    # eigenvector of hi; fall back to e1 when A is a multiple of I
    vx = np.where(rad > 0, b, 1.0)
    vy = np.where(rad > 0, hi - a, 0.0)
    swap = (rad > 0) & (np.hypot(vx, vy) < 1e-300)
    vx = np.where(swap, hi - c, vx)
    vy = np.where(swap, b, vy)
    nrm = np.hypot(vx, vy)
    nrm = np.where(nrm > 0, nrm, 1.0)
    vx, vy = vx / nrm, vy / nrm
    return lo, hi, vx, vy


def _matrix_power(A, p):
    lo, hi, vx, vy = _eig2(A)
    ph, pl = hi**p, lo**p
    out = np.empty(A.shape)
    # A^p = ph v v^T + pl w w^T with w = (-vy, vx)
    out[..., 0, 0] = ph * vx * vx + pl * vy * vy
    out[..., 0, 1] = ph * vx * vy - pl * vx * vy
    out[..., 1, 0] = out[..., 0, 1]
    out[..., 1, 1] = ph * vy * vy + pl * vx * vx
    return out


@dataclass(frozen=True)
class EdgeCoefficient:
    lam_minus: np.ndarray
    lam_plus: np.ndarray      # equals lam_minus on boundary edges
    Lam_minus: np.ndarray
    Lam_plus: np.ndarray
    lam_F: np.ndarray         # min over the two sides
    theta: np.ndarray         # Lam^- / (Lam^- + Lam^+); 1 on the boundary
    alpha_H: np.ndarray       # lam^+ lam^- / (lam^+ + lam^-); lam^- on the boundary
    w_minus: np.ndarray       # lam^+ / (lam^- + lam^+); 1 on the boundary
    w_plus: np.ndarray        # lam^- / (lam^- + lam^+); 0 on the boundary


@dataclass(frozen=True)
class Coefficient:
    """Diffusion tensor per subdomain id."""

    tensors: dict = field(default_factory=lambda: {0: np.eye(2)})
    kappa: float = 1.0e3

    def __post_init__(self):
        fixed = {}
        for sid, A in self.tensors.items():
            A = np.asarray(A, dtype=float)
            if A.ndim == 0:
                A = float(A) * np.eye(2)
            if A.shape != (2, 2) or not np.allclose(A, A.T, rtol=0, atol=1e-14 * np.abs(A).max()):
                raise CoefficientError(f"tensor of subdomain {sid} is not a symmetric 2x2 matrix")
            lo, hi, _, _ = _eig2(A)
            if lo <= 0:
                raise CoefficientError(f"tensor of subdomain {sid} is not positive definite")
            if hi / lo > self.kappa:
                raise CoefficientError(f"anisotropy ratio {hi / lo:.3g} of subdomain {sid} exceeds kappa={self.kappa}")
            fixed[int(sid)] = A
        object.__setattr__(self, "tensors", fixed)

    @classmethod
    def scalar(cls, values: dict, kappa: float = 1.0e3) -> "Coefficient":
        return cls({k: float(v) * np.eye(2) for k, v in values.items()}, kappa)

    def element_tensors(self, mesh: Mesh) -> np.ndarray:
        missing = set(np.unique(mesh.subdomain).tolist()) - set(self.tensors)
        if missing:
            raise CoefficientError(f"no tensor for subdomains {sorted(missing)}")
        ids = np.array(sorted(self.tensors))
        table = np.stack([self.tensors[i] for i in ids])
        return table[np.searchsorted(ids, mesh.subdomain)]

    def eig_bounds(self, mesh: Mesh):
        lo, hi, _, _ = _eig2(self.element_tensors(mesh))
        return lo, hi

    def sqrt(self, mesh: Mesh) -> np.ndarray:
        return _matrix_power(self.element_tensors(mesh), 0.5)

    def inv_sqrt(self, mesh: Mesh) -> np.ndarray:
        return _matrix_power(self.element_tensors(mesh), -0.5)

    def inverse(self, mesh: Mesh) -> np.ndarray:
        return _matrix_power(self.element_tensors(mesh), -1.0)

    def edge_data(self, mesh: Mesh) -> EdgeCoefficient:
        lam, Lam = self.eig_bounds(mesh)
        km, kp = mesh.edge_elements[:, 0], mesh.edge_elements[:, 1]
        interior = mesh.boundary_tag == INTERIOR
        kp_ = np.where(interior, kp, km)
        lm, lp = lam[km], lam[kp_]
        Lm, Lp = Lam[km], Lam[kp_]
        theta = np.where(interior, Lm / (Lm + Lp), 1.0)
        alpha = np.where(interior, lm * lp / (lm + lp), lm)
        w_minus = np.where(interior, lp / (lm + lp), 1.0)
        w_plus = np.where(interior, lm / (lm + lp), 0.0)
        return EdgeCoefficient(lm, lp, Lm, Lp, np.minimum(lm, lp), theta, alpha, w_minus, w_plus)

    def scaled(self, c: float) -> "Coefficient":
        return Coefficient({k: c * v for k, v in self.tensors.items()}, self.kappa)
