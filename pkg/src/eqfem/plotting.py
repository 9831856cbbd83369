"""Matplotlib figures written straight to files (no display needed)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PolyCollection  # noqa: E402

from .mesh import Mesh  # noqa: E402


def plot_mesh(mesh: Mesh, path, title: str | None = None, zoom: float | None = None) -> None:
    """Triangles shaded by subdomain; ``zoom`` limits the view to [-zoom, zoom]^2."""
    fig, ax = plt.subplots(figsize=(6, 6))
    shade = np.where(mesh.subdomain % 2 == 1, 0.85, 1.0)
    colors = np.repeat(shade[:, None], 3, axis=1)
    pc = PolyCollection(mesh.coords, facecolors=colors, edgecolors="k", linewidths=0.2)
    ax.add_collection(pc)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    if zoom is not None:
        lo, hi = np.array([-zoom, -zoom]), np.array([zoom, zoom])
    ax.set_xlim(lo[0], hi[0])
    ax.set_ylim(lo[1], hi[1])
    ax.set_aspect("equal")
    ax.set_title(title or f"{mesh.n_elements} triangles")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_convergence(records, path, title: str | None = None) -> None:
    """Log-log error and estimator against DOFs with a slope -1/2 guide."""
    ndof = np.array([r.ndof for r in records], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.loglog(ndof, [r.eta for r in records], "o-", ms=3, label="estimator")
    err = np.array([r.energy_error for r in records], dtype=float)
    if np.all(np.isfinite(err)):
        ax.loglog(ndof, err, "s-", ms=3, label="energy error")
        ref = err[0]
    else:
        ref = records[0].eta
    ax.loglog(ndof, ref * (ndof / ndof[0]) ** -0.5, "k--", lw=0.8, label="slope -1/2")
    ax.set_xlabel("degrees of freedom")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
