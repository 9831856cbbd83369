"""Benchmark problems: Kellogg checkerboard, L-shape corner, manufactured interface."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coefficient import Coefficient
from .mesh import DIRICHLET, Mesh, criss_cross, lshape_fan, refine_uniform


class ProblemError(ValueError):
    pass


@dataclass
class ProblemSpec:
    name: str
    initial_mesh: Callable[[], Mesh]
    coefficient: Coefficient
    f: Callable
    g: Callable | None = None
    u_D: Callable | None = None
    exact: Callable | None = None
    exact_gradient: Callable | None = None
    singular_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    _energy: float | None = None

    def mesh(self) -> Mesh:
        m = self.initial_mesh()
        if not np.any(m.boundary_tag == DIRICHLET):
            raise ProblemError(f"problem {self.name!r} has an empty Dirichlet boundary")
        return m

    def energy_norm(self, levels: int = 3) -> float:
        """||A^{1/2} grad u|| by high-order quadrature on a uniformly refined initial mesh."""
        if self.exact_gradient is None:
            raise ProblemError(f"problem {self.name!r} has no exact solution")
        if self._energy is None:
            from .estimator import energy_norm
            m = refine_uniform(self.mesh(), levels)
            self._energy = energy_norm(m, self.exact_gradient, self.coefficient, self.singular_points)
        return self._energy


def _stack(gx, gy):
    return np.stack(np.broadcast_arrays(gx, gy), axis=-1)


def _angle(x, y):
    t = np.arctan2(y, x)
    return np.where(t < 0, t + 2 * np.pi, t)


# ---------------------------------------------------------------------------
# Kellogg
# ---------------------------------------------------------------------------

KELLOGG_A = 161.4476387975881
KELLOGG_GAMMA = 0.1
KELLOGG_RHO = np.pi / 4
KELLOGG_SIGMA = -14.92256510455152


def kellogg_mu(theta, derivative: bool = False):
    """Angular factor (or its derivative) of the checkerboard solution."""
    g, rho, sig = KELLOGG_GAMMA, KELLOGG_RHO, KELLOGG_SIGMA
    theta = np.asarray(theta, dtype=float)
    pieces = [
        (np.cos((np.pi / 2 - sig) * g), -np.pi / 2 + rho),
        (np.cos(rho * g), -np.pi + sig),
        (np.cos(sig * g), -np.pi - rho),
        (np.cos((np.pi / 2 - rho) * g), -3 * np.pi / 2 - sig),
    ]
    q = np.clip((theta // (np.pi / 2)).astype(int), 0, 3)
    amp = np.choose(q, [p[0] for p in pieces])
    shift = np.choose(q, [p[1] for p in pieces])
    if derivative:
        return -g * amp * np.sin((theta + shift) * g)
    return amp * np.cos((theta + shift) * g)


def kellogg_exact(x, y):
    r = np.hypot(x, y)
    return r**KELLOGG_GAMMA * kellogg_mu(_angle(x, y))


def kellogg_gradient(x, y):
    r = np.hypot(x, y)
    t = _angle(x, y)
    mu, dmu = kellogg_mu(t), kellogg_mu(t, derivative=True)
    rg = r ** (KELLOGG_GAMMA - 1)
    ur, ut = KELLOGG_GAMMA * mu, dmu        # times r^{gamma-1}
    c, s = np.cos(t), np.sin(t)
    return _stack(rg * (ur * c - ut * s), rg * (ur * s + ut * c))


def _kellogg_a(theta):
    q = np.clip((np.asarray(theta) // (np.pi / 2)).astype(int), 0, 3)
    return np.where(q % 2 == 0, KELLOGG_A, 1.0)


def kellogg_oracle(n: int = 1000, h: float = 1e-3, seed: int = 7) -> dict:
    """Residuals of the assembled exact solution: continuity, flux continuity,
    and a fourth-order finite-difference check of -div(A grad u) = 0."""
    rng = np.random.default_rng(seed)
    r = rng.uniform(0.05, 1.0, n)
    eps = 1e-12
    cont, flux = 0.0, 0.0
    for k in range(4):
        t0 = k * np.pi / 2
        lo, hi = (t0 - eps) % (2 * np.pi), t0 + eps
        cont = max(cont, float(np.max(np.abs(kellogg_mu(lo) - kellogg_mu(hi)))))
        # normal derivative across the ray is (1/r) du/dtheta
        jl = _kellogg_a(lo) * kellogg_mu(lo, True)
        jh = _kellogg_a(hi) * kellogg_mu(hi, True)
        flux = max(flux, float(np.max(np.abs(r ** (KELLOGG_GAMMA - 1) * (jl - jh)))))
    # periodicity of the angular factor
    cont = max(cont, float(abs(kellogg_mu(0.0) - kellogg_mu(2 * np.pi - eps))))
    flux = max(flux, float(abs(_kellogg_a(0.0) * kellogg_mu(0.0, True)
                                - _kellogg_a(2 * np.pi - eps) * kellogg_mu(2 * np.pi - eps, True))))
    # interior points kept 10 h away from the axes
    t = rng.uniform(0, 2 * np.pi, n)
    rr = rng.uniform(0.2, 1.0, n)
    x, y = rr * np.cos(t), rr * np.sin(t)
    keep = (np.abs(x) > 10 * h) & (np.abs(y) > 10 * h)
    x, y = x[keep], y[keep]
    lap = fd_laplacian(kellogg_exact, x, y, h)
    return {"continuity": cont, "flux_jump": flux, "laplacian": float(np.max(np.abs(lap)))}


def fd_laplacian(u, x, y, h: float = 1e-3):
    """Fourth-order central-difference Laplacian."""
    c = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12 * h * h)
    off = np.arange(-2, 3) * h
    dxx = sum(ci * u(x + o, y) for ci, o in zip(c, off))
    dyy = sum(ci * u(x, y + o) for ci, o in zip(c, off))
    return dxx + dyy


def kellogg_problem(n: int = 4, verify: bool = True) -> ProblemSpec:
    if verify:
        res = kellogg_oracle()
        if res["continuity"] > 1e-9 or res["flux_jump"] > 1e-9 or res["laplacian"] > 1e-6:
            raise ProblemError(f"checkerboard exact solution failed its oracle: {res}")
    coeff = Coefficient.scalar({0: 1.0, 1: KELLOGG_A})
    sub = lambda c: (c[:, 0] * c[:, 1] > 0).astype(int)
    return ProblemSpec(
        name="kellogg",
        initial_mesh=lambda: criss_cross(n, subdomain_of=sub),
        coefficient=coeff,
        f=lambda x, y: np.zeros(np.broadcast(x, y).shape),
        u_D=kellogg_exact,
        exact=kellogg_exact,
        exact_gradient=kellogg_gradient,
        singular_points=np.zeros((1, 2)),
    )


def kellogg_energy_oracle() -> float:
    """||A^{1/2} grad u|| on (-1,1)^2 from the separable form, by 1D quadrature in angle.

    On the ray at angle t the square ends at R(t) = 1/max(|cos t|, |sin t|) and
    int_0^R r^{2 gamma - 1} dr = R^{2 gamma} / (2 gamma).
    """
    from scipy.integrate import quad

    g = KELLOGG_GAMMA

    def integrand(t):
        R = 1.0 / max(abs(np.cos(t)), abs(np.sin(t)))
        ang = _kellogg_a(t) * (g**2 * kellogg_mu(t) ** 2 + kellogg_mu(t, True) ** 2)
        return float(R ** (2 * g) / (2 * g) * ang)

    total = 0.0
    for j in range(8):
        a, b = j * np.pi / 4, (j + 1) * np.pi / 4
        total += quad(integrand, a + 1e-15, b - 1e-15, epsabs=0, epsrel=1e-13, limit=200)[0]
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# L-shape
# ---------------------------------------------------------------------------

def lshape_exact(x, y):
    r = np.hypot(x, y)
    t = _angle(x, y)
    return r ** (2 / 3) * np.sin((2 * t + np.pi) / 3) + 0.5 * r * r


def lshape_gradient(x, y):
    # r^a sin(a t + c) is the imaginary part of e^{ic} z^a
    r = np.hypot(x, y)
    t = _angle(x, y)
    a, c = 2 / 3, np.pi / 3
    ph = (a - 1) * t + c
    amp = a * r ** (a - 1)
    return _stack(amp * np.sin(ph) + x, amp * np.cos(ph) + y)


def lshape_problem(levels: int = 2) -> ProblemSpec:
    return ProblemSpec(
        name="lshape",
        initial_mesh=lambda: refine_uniform(lshape_fan(), levels),
        coefficient=Coefficient.scalar({0: 1.0}),
        f=lambda x, y: np.full(np.broadcast(x, y).shape, -2.0),
        u_D=lshape_exact,
        exact=lshape_exact,
        exact_gradient=lshape_gradient,
        singular_points=np.zeros((1, 2)),
    )


# ---------------------------------------------------------------------------
# manufactured interface problems on (-1,1)^2, interface x = 0
# ---------------------------------------------------------------------------

_PX = np.array([0.0, 1.0, 0.5, 0.25])      # p(x) coefficients, p(0) = 0
_QY = np.array([1.0, 0.3, 0.2, 0.1])       # q(y) coefficients


def manufactured_problem(k: int = 1, A_jump: float = 1.0, kind: str = "polynomial", n: int = 4) -> ProblemSpec:
    """Exact solutions continuous with continuous normal flux across x = 0.

    ``a = 1`` for x < 0 and ``a = A_jump`` for x > 0.

    kind "polynomial": u = p(x)/a + q(y) with p, q of degree k and p(0) = 0,
        so u is piecewise polynomial of degree k with a kink at the interface.
    kind "smooth": u = sin(pi x) cos(pi y / 2) / (pi a); the source
        sin(pi x) cos(pi y / 2) (pi + pi/4) does not depend on the jump.
    kind "transmission": u = sin(pi x) / (pi a) + cos(pi y / 2), which does not
        vanish on the interface, so both sides carry energy for every jump.
    """
    a_of = lambda x: np.where(x > 0, A_jump, 1.0)
    if kind == "polynomial":
        p = np.polynomial.Polynomial(_PX[:k + 1])
        q = np.polynomial.Polynomial(_QY[:k + 1])
        dp, dq, d2p, d2q = p.deriv(), q.deriv(), p.deriv(2), q.deriv(2)
        exact = lambda x, y: p(x) / a_of(x) + q(y)
        grad = lambda x, y: _stack(dp(x) / a_of(x), dq(y) + 0 * x)
        f = lambda x, y: -d2p(x) - a_of(x) * d2q(y)
    elif kind == "smooth":
        c = np.pi + np.pi / 4
        exact = lambda x, y: np.sin(np.pi * x) * np.cos(np.pi * y / 2) / (np.pi * a_of(x))
        grad = lambda x, y: _stack(np.cos(np.pi * x) * np.cos(np.pi * y / 2) / a_of(x),
                                   -0.5 * np.sin(np.pi * x) * np.sin(np.pi * y / 2) / a_of(x))
        f = lambda x, y: c * np.sin(np.pi * x) * np.cos(np.pi * y / 2)
    elif kind == "transmission":
        exact = lambda x, y: np.sin(np.pi * x) / (np.pi * a_of(x)) + np.cos(np.pi * y / 2)
        grad = lambda x, y: _stack(np.cos(np.pi * x) / a_of(x), -0.5 * np.pi * np.sin(np.pi * y / 2) + 0 * x)
        f = lambda x, y: np.pi * np.sin(np.pi * x) + a_of(x) * (np.pi**2 / 4) * np.cos(np.pi * y / 2)
    else:
        raise ProblemError(f"unknown manufactured kind {kind!r}")
    sub = lambda cen: (cen[:, 0] > 0).astype(int)
    return ProblemSpec(
        name="manufactured",
        initial_mesh=lambda: criss_cross(n, subdomain_of=sub),
        coefficient=Coefficient.scalar({0: 1.0, 1: A_jump}, kappa=1.0e3),
        f=f,
        u_D=exact,
        exact=exact,
        exact_gradient=grad,
    )


def get_problem(name: str, **kw) -> ProblemSpec:
    makers = {"kellogg": kellogg_problem, "lshape": lshape_problem, "manufactured": manufactured_problem}
    if name not in makers:
        raise ProblemError(f"unknown problem {name!r}; choose from {sorted(makers)}")
    return makers[name](**kw)
