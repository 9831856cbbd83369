import time

import numpy as np
import pytest

from eqfem.adaptive import run_adaptive
from eqfem.mesh import build_topology
from eqfem.problems import kellogg_problem, lshape_problem


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def kellogg_run():
    """Adaptive nc1 run on the checkerboard problem down to 10 % relative error."""
    res, wall = timed(run_adaptive, kellogg_problem(), "nc1", stop_rel=0.1, max_dof=100_000)
    return res, wall


@pytest.fixture(scope="session")
def lshape_run():
    res, wall = timed(run_adaptive, lshape_problem(), "nc1", stop_rel=0.0075, max_dof=200_000)
    return res, wall


@pytest.fixture
def unit_square():
    """Two triangles sharing the diagonal from (0,0) to (1,1)."""
    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    t = np.array([[0, 1, 2], [0, 2, 3]])
    return build_topology(v, t)


@pytest.fixture
def reference_triangle():
    return build_topology(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
