"""Command line: ``fem run`` for adaptive benchmarks, ``fem verify`` for self-checks."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

from .adaptive import CSV_FIELDS, DEFAULT_THETA, METHODS, fit_slope, run_adaptive
from .dg import DEFAULT_GAMMA

RUN_DEFAULTS = {
    "problem": "kellogg",
    "method": "nc1",
    "theta": DEFAULT_THETA,
    "stop_rel": None,
    "stop_dof": None,
    "max_iter": None,
    "gamma": DEFAULT_GAMMA,
    "jump": 1.0,
    "dump_fields": False,
}


def thread_limit():
    """Context capping BLAS/OpenMP pools at FEM_THREADS workers, if set."""
    n = os.environ.get("FEM_THREADS")
    if not n:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:                                   # pragma: no cover
        logging.getLogger(__name__).warning("threadpoolctl missing; FEM_THREADS ignored")
        return nullcontext()
    return threadpool_limits(limits=int(n))


def _build_problem(cfg):
    from .problems import get_problem
    if cfg["problem"] == "manufactured":
        k = METHODS[cfg["method"]][1]
        return get_problem("manufactured", k=k, A_jump=cfg["jump"], kind="transmission")
    return get_problem(cfg["problem"])


def write_history(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in records:
            w.writerow(r.csv_row())


def cmd_run(args) -> int:
    cfg = dict(RUN_DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            user = json.load(fh)
        unknown = set(user) - set(cfg)
        if unknown:
            print(f"unknown config keys: {sorted(unknown)}", file=sys.stderr)
            return 2
        cfg.update(user)
    for key in RUN_DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            cfg[key] = val
    if cfg["stop_rel"] is None and cfg["stop_dof"] is None and cfg["max_iter"] is None:
        cfg["max_iter"] = 20

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump(cfg, fh, indent=2)

    from . import plotting
    from .mesh import write_mesh
    from .nc import write_solution
    from .recovery import write_field

    problem = _build_problem(cfg)
    t0 = time.perf_counter()

    def progress(rec, step):
        print(f"iter {rec.iter:3d}  ndof {rec.ndof:7d}  eta {rec.eta:.4e}  err {rec.energy_error:.4e}  "
              f"eff {rec.eff_index:.3f}", flush=True)

    with thread_limit():
        res = run_adaptive(problem, cfg["method"], theta=cfg["theta"], stop_rel=cfg["stop_rel"],
                           max_dof=cfg["stop_dof"], max_iter=cfg["max_iter"], gamma=cfg["gamma"],
                           callback=None if args.quiet else progress)
    write_history(out / "history.csv", res.records)
    title = f"{cfg['problem']} / {cfg['method']}"
    plotting.plot_mesh(res.first.mesh, out / "mesh_initial.svg", f"{title}: initial mesh")
    plotting.plot_mesh(res.last.mesh, out / "mesh_final.svg", f"{title}: {res.last.mesh.n_elements} triangles")
    plotting.plot_convergence(res.records, out / "convergence.svg", title)
    if cfg["dump_fields"]:
        write_mesh(out / "mesh_final.txt", res.last.mesh)
        write_solution(out / "solution.txt", res.last.solution)
        write_field(out / "flux.txt", res.last.flux)
        write_field(out / "gradient.txt", res.last.gradient)
    recs = res.records
    summary = {"iterations": len(recs), "stop_reason": res.stop_reason, "final_ndof": recs[-1].ndof,
               "final_eta": recs[-1].eta, "final_energy_error": recs[-1].energy_error,
               "final_rel_error": recs[-1].rel_error, "wall_time": time.perf_counter() - t0}
    if len(recs) >= 3:
        nd = [r.ndof for r in recs]
        summary["slope_eta"] = fit_slope(nd, [r.eta for r in recs])
        if recs[-1].energy_error == recs[-1].energy_error:
            summary["slope_error"] = fit_slope(nd, [r.energy_error for r in recs])
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_verify(args) -> int:
    from .verify import SUITES
    names = list(SUITES) if args.suite == "all" else [args.suite]
    failed = 0
    with thread_limit():
        for name in names:
            print(f"[{name}]")
            for check in SUITES[name]():
                print("  " + check.line())
                failed += not check.ok
    print(f"{failed} check(s) failed" if failed else "all checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fem", description="Adaptive nonconforming/DG FEM with recovery-based error estimators")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="adaptive run on a benchmark problem")
    r.add_argument("--problem", choices=["kellogg", "lshape", "manufactured"])
    r.add_argument("--method", choices=sorted(METHODS))
    r.add_argument("--theta", type=float, help=f"bulk marking fraction (default {DEFAULT_THETA})")
    r.add_argument("--stop-rel", dest="stop_rel", type=float, help="stop when relative energy error drops below")
    r.add_argument("--stop-dof", dest="stop_dof", type=int, help="stop once the DOF count reaches")
    r.add_argument("--max-iter", dest="max_iter", type=int, help="maximum number of refinements")
    r.add_argument("--gamma", type=float, help=f"SIPG penalty (default {DEFAULT_GAMMA})")
    r.add_argument("--jump", type=float, help="coefficient jump of the manufactured problem")
    r.add_argument("--config", help="JSON file with run settings; flags override it")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--dump-fields", dest="dump_fields", action="store_true", help="write final mesh, solution and fields")
    r.add_argument("-q", "--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run a self-check suite")
    v.add_argument("--suite", choices=["conformity", "equilibration", "patch", "oracle", "all"], default="all")
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
