"""Adaptive loop: solve, recover, estimate, mark, refine."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dg, nc
from .estimator import IndicatorSet, efficiency_index, energy_error, indicators, local_efficiency_ratio, reliability_ratio
from .mesh import Mesh, dorfler_mark, refine
from .problems import ProblemSpec
from .recovery import recover_flux, recover_flux_dg, recover_gradient

log = logging.getLogger(__name__)

METHODS = {"nc1": ("nc", 1), "nc3": ("nc", 3), "dg1": ("dg", 1)}
DEFAULT_THETA = 0.3
CSV_FIELDS = ("iter", "ndof", "energy_error", "eta_sigma", "eta_rho", "eta", "osc", "eff_index")


@dataclass
class ConvergenceRecord:
    iter: int
    ndof: int
    energy_error: float
    eta_sigma: float
    eta_rho: float
    eta: float
    osc: float
    eff_index: float
    rel_error: float = float("nan")
    reliability_ratio: float = float("nan")
    local_efficiency: float = float("nan")
    n_elements: int = 0
    wall_time: float = 0.0

    def csv_row(self) -> list:
        d = asdict(self)
        return [d[k] for k in CSV_FIELDS]


@dataclass
class Step:
    """Everything computed on one mesh."""
    mesh: Mesh
    solution: object
    flux: object
    gradient: object
    indicators: IndicatorSet
    local_error: np.ndarray | None = None


@dataclass
class AdaptiveResult:
    records: list = field(default_factory=list)
    first: Step | None = None
    last: Step | None = None
    stop_reason: str = ""

    @property
    def final_mesh(self) -> Mesh:
        return self.last.mesh


class AdaptiveError(RuntimeError):
    pass


def solve_and_estimate(problem: ProblemSpec, mesh: Mesh, method: str = "nc1", gamma: float = dg.DEFAULT_GAMMA,
                       **solver_opts) -> Step:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    family, k = METHODS[method]
    p = problem
    if family == "nc":
        sol = nc.solve_problem(mesh, p.coefficient, p.f, p.g, p.u_D, k=k, **solver_opts)
        flux = recover_flux(sol, p.g)
        grad = recover_gradient(sol, p.coefficient, u_D=p.u_D)
    else:
        sol = dg.solve_dg_problem(mesh, p.coefficient, p.f, p.g, p.u_D, gamma=gamma, **solver_opts)
        flux = recover_flux_dg(sol, p.g)
        grad = dg.recover_gradient_dg(sol)
    ind = indicators(sol, flux, grad, p.coefficient, p.f)
    return Step(mesh, sol, flux, grad, ind)


def run_adaptive(problem: ProblemSpec, method: str = "nc1", theta: float = DEFAULT_THETA,
                 stop_rel: float | None = None, max_dof: int | None = None, max_iter: int | None = None,
                 gamma: float = dg.DEFAULT_GAMMA, mesh: Mesh | None = None, callback=None,
                 **solver_opts) -> AdaptiveResult:
    """Adaptive refinement until a stop rule fires.

    Stop rules: relative energy error below ``stop_rel`` (needs an exact
    solution), DOF count at least ``max_dof``, or ``max_iter`` refinements.
    With no rule given the loop stops after 20 refinements.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    if stop_rel is None and max_dof is None and max_iter is None:
        max_iter = 20
    if stop_rel is not None and problem.exact_gradient is None:
        raise ValueError("a relative-error stop needs an exact solution")
    mesh = mesh if mesh is not None else problem.mesh()
    norm_u = problem.energy_norm() if problem.exact_gradient is not None else None
    res = AdaptiveResult()
    it = 0
    while True:
        t0 = time.perf_counter()
        try:
            step = solve_and_estimate(problem, mesh, method, gamma, **solver_opts)
        except Exception as exc:
            raise AdaptiveError(f"iteration {it} ({mesh.n_elements} elements) failed: {exc}") from exc
        ind = step.indicators
        err, rel, rr, le = float("nan"), float("nan"), float("nan"), float("nan")
        if problem.exact_gradient is not None:
            step.local_error, err = energy_error(step.solution, problem.exact_gradient, problem.coefficient,
                                                 problem.singular_points)
            rel = err / norm_u if norm_u else float("nan")
            rr = reliability_ratio(ind, err)
            le = local_efficiency_ratio(mesh, ind, step.local_error)
        eff = efficiency_index(ind, err) if np.isfinite(err) else float("nan")
        rec = ConvergenceRecord(it, int(len(step.solution.values)), err, ind.eta_sigma, ind.eta_rho, ind.eta,
                                ind.osc, eff, rel, rr, le, mesh.n_elements, time.perf_counter() - t0)
        res.records.append(rec)
        if res.first is None:
            res.first = step
        res.last = step
        log.info("iter %d ndof %d eta %.4e err %.4e rel %.4e", it, rec.ndof, rec.eta, err, rel)
        if callback is not None:
            callback(rec, step)

        if stop_rel is not None and rel < stop_rel:
            res.stop_reason = "rel_error"
            break
        if max_dof is not None and rec.ndof >= max_dof:
            res.stop_reason = "max_dof"
            break
        if max_iter is not None and it >= max_iter:
            res.stop_reason = "max_iter"
            break
        marked = dorfler_mark(ind.eta_K**2, theta)
        mesh = refine(mesh, marked)
        it += 1
    return res


def fit_slope(ndof, values, last: int = 8) -> float:
    """Least-squares slope of log(values) against log(ndof) over the last iterations."""
    x = np.log(np.asarray(ndof, dtype=float)[-last:])
    y = np.log(np.asarray(values, dtype=float)[-last:])
    return float(np.polyfit(x, y, 1)[0])
