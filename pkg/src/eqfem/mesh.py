"""Conforming triangular meshes with oriented edges and newest-vertex bisection.

Edge conventions
----------------
Every edge F is stored as ``(s_F, e_F)``.  The tangent is
``t_F = (e_F - s_F) / h_F`` and the normal is the clockwise rotation
``n_F = (t_2, -t_1)`` so that ``t_F = (-n_2, n_1)``.  Interior edges are stored
with ``s_F < e_F`` (global vertex numbers); boundary edges follow the
counter-clockwise traversal of their element so ``n_F`` is the outward normal
of the domain.  ``K_F^-`` is the element whose outward normal on F is ``n_F``.

Triangles are counter-clockwise and local vertex 0 is the newest vertex, so
local edge 0 (opposite vertex 0) is the refinement edge.  Local edge ``i`` is
opposite local vertex ``i``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2
_TAG_FROM_CHAR = {"D": DIRICHLET, "N": NEUMANN}
_CHAR_FROM_TAG = {DIRICHLET: "D", NEUMANN: "N"}


class MeshError(ValueError):
    pass


class RefinementError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray        # (nV, 2)
    triangles: np.ndarray       # (nT, 3), ccw, local vertex 0 = newest vertex
    subdomain: np.ndarray       # (nT,)
    edges: np.ndarray           # (nE, 2) = (s_F, e_F)
    tri_edges: np.ndarray       # (nT, 3), local edge i opposite local vertex i
    tri_signs: np.ndarray       # (nT, 3), mu_K(F) in {+1, -1}
    edge_elements: np.ndarray   # (nE, 2) = (K^-, K^+), K^+ = -1 on the boundary
    boundary_tag: np.ndarray    # (nE,) INTERIOR / DIRICHLET / NEUMANN

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def coords(self) -> np.ndarray:
        return self.vertices[self.triangles]

    @cached_property
    def areas(self) -> np.ndarray:
        c = self.coords
        e1 = c[:, 1] - c[:, 0]
        e2 = c[:, 2] - c[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def centers(self) -> np.ndarray:
        return self.coords.mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        return self.edge_lengths[self.tri_edges].max(axis=1)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def tangents(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return d / self.edge_lengths[:, None]

    @cached_property
    def normals(self) -> np.ndarray:
        t = self.tangents
        return np.column_stack([t[:, 1], -t[:, 0]])

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_tag == INTERIOR)

    @property
    def dirichlet_edges(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_tag == DIRICHLET)

    @property
    def neumann_edges(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_tag == NEUMANN)

    @cached_property
    def checksum(self) -> str:
        h = hashlib.sha256()
        for a in (self.vertices, self.triangles, self.subdomain, self.boundary_tag):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]

    def min_angle(self) -> float:
        """Smallest interior angle over all triangles, in degrees."""
        c = self.coords
        angles = []
        for i in range(3):
            u = c[:, (i + 1) % 3] - c[:, i]
            v = c[:, (i + 2) % 3] - c[:, i]
            cosang = np.einsum("td,td->t", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
        return float(np.min(angles))

    def local_edge(self, K: int, F: int) -> int:
        hit = np.flatnonzero(self.tri_edges[K] == F)
        if len(hit) == 0:
            raise MeshError(f"edge {F} is not an edge of element {K}")
        return int(hit[0])

    def element_patches(self) -> list[np.ndarray]:
        """omega_K: K together with every element sharing an edge with K."""
        nbr = self.edge_elements[self.tri_edges]          # (nT, 3, 2)
        out = []
        for K in range(self.n_elements):
            ids = nbr[K].ravel()
            out.append(np.unique(ids[ids >= 0]))
        return out

    def neighbor_sum(self, values) -> np.ndarray:
        """Sum of a per-element quantity over omega_K, for every K."""
        values = np.asarray(values, dtype=float)
        total = values.copy()
        for i in range(3):
            F = self.tri_edges[:, i]
            km, kp = self.edge_elements[F, 0], self.edge_elements[F, 1]
            other = np.where(km == np.arange(self.n_elements), kp, km)
            total += np.where(other >= 0, values[np.maximum(other, 0)], 0.0)
        return total


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _signed_areas(vertices, triangles):
    c = vertices[triangles]
    e1 = c[:, 1] - c[:, 0]
    e2 = c[:, 2] - c[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _longest_edge_first(vertices, triangles):
    """Rotate each triangle so that its longest edge is opposite local vertex 0."""
    c = vertices[triangles]
    lens = np.stack([np.linalg.norm(c[:, (i + 2) % 3] - c[:, (i + 1) % 3], axis=1) for i in range(3)], axis=1)
    r = np.argmax(lens, axis=1)
    idx = (r[:, None] + np.arange(3)[None, :]) % 3
    return np.take_along_axis(triangles, idx, axis=1)


def _tags_from_spec(boundary, vertices, pairs):
    """Resolve boundary tags for boundary edges given as vertex pairs."""
    n = len(pairs)
    if boundary is None:
        return np.full(n, DIRICHLET)
    if callable(boundary):
        mid = 0.5 * (vertices[pairs[:, 0]] + vertices[pairs[:, 1]])
        tags = np.asarray(boundary(mid))
        return _normalize_tags(tags)
    spec = list(boundary)
    tags = np.full(n, DIRICHLET)
    if not spec:
        return tags
    nV = len(vertices)
    sp = np.array([[int(a), int(b)] for a, b, _ in spec], dtype=np.int64)
    st = _normalize_tags(np.array([t for _, _, t in spec], dtype=object))
    skeys = np.minimum(sp[:, 0], sp[:, 1]) * nV + np.maximum(sp[:, 0], sp[:, 1])
    order = np.argsort(skeys)
    skeys, st = skeys[order], st[order]
    keys = np.minimum(pairs[:, 0], pairs[:, 1]).astype(np.int64) * nV + np.maximum(pairs[:, 0], pairs[:, 1])
    pos = np.clip(np.searchsorted(skeys, keys), 0, len(skeys) - 1)
    hit = skeys[pos] == keys
    tags[hit] = st[pos[hit]]
    if hit.sum() != len(np.unique(skeys)):
        raise MeshError("boundary specification names a segment that is not a boundary edge")
    return tags


def _normalize_tags(tags):
    out = np.empty(len(tags), dtype=int)
    for i, t in enumerate(tags):
        if isinstance(t, str):
            if t not in _TAG_FROM_CHAR:
                raise MeshError(f"unknown boundary tag {t!r}")
            out[i] = _TAG_FROM_CHAR[t]
        else:
            if int(t) not in (DIRICHLET, NEUMANN):
                raise MeshError(f"unknown boundary tag {t!r}")
            out[i] = int(t)
    return out


def _check_hanging(vertices, pairs, tol=1e-12):
    """Reject vertices lying in the interior of a boundary edge of the triangulation."""
    a = vertices[pairs[:, 0]]
    b = vertices[pairs[:, 1]]
    d = b - a
    L2 = np.einsum("ed,ed->e", d, d)
    for start in range(0, len(pairs), 256):
        sl = slice(start, start + 256)
        rel = vertices[None, :, :] - a[sl, None, :]
        s = np.einsum("evd,ed->ev", rel, d[sl]) / L2[sl, None]
        cross = rel[..., 0] * d[sl, None, 1] - rel[..., 1] * d[sl, None, 0]
        dist = np.abs(cross) / np.sqrt(L2[sl, None])
        bad = (s > tol) & (s < 1.0 - tol) & (dist < tol * np.sqrt(L2[sl, None]))
        if bad.any():
            e, v = np.argwhere(bad)[0]
            p = pairs[start + e]
            raise MeshError(f"hanging vertex {v} on edge ({p[0]}, {p[1]})")


def build_topology(vertices, triangles, subdomain=None, boundary=None, *,
                   tag_longest: bool = True, check_conformity: bool = True) -> Mesh:
    """Build a :class:`Mesh` from raw counter-clockwise triangles.

    ``boundary`` is None (all Dirichlet), a callable on edge midpoints
    returning tags, or an iterable of ``(i, j, tag)`` rows with tag in
    {"D", "N"}.  Boundary segments not listed default to Dirichlet.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    nV, nT = len(vertices), len(triangles)
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError("triangles must be an (n, 3) array")
    if triangles.min(initial=0) < 0 or triangles.max(initial=0) >= nV:
        raise MeshError("triangle vertex index out of range")
    area = _signed_areas(vertices, triangles)
    if np.any(area <= 0.0):
        K = int(np.flatnonzero(area <= 0.0)[0])
        raise MeshError(f"triangle {K} is clockwise or degenerate")
    if tag_longest:
        triangles = _longest_edge_first(vertices, triangles)
    subdomain = np.zeros(nT, dtype=np.int64) if subdomain is None else np.asarray(subdomain, dtype=np.int64)

    a = triangles[:, [1, 2, 0]].ravel()
    b = triangles[:, [2, 0, 1]].ravel()
    elem = np.repeat(np.arange(nT), 3)
    keys = np.minimum(a, b) * nV + np.maximum(a, b)
    _, first, inv, counts = np.unique(keys, return_index=True, return_inverse=True, return_counts=True)
    if np.any(counts > 2):
        F = int(np.flatnonzero(counts > 2)[0])
        raise MeshError(f"edge ({a[first[F]]}, {b[first[F]]}) is shared by more than two triangles")
    nE = len(counts)
    fwd = a < b
    boundary_edge = counts == 1
    nfwd = np.bincount(inv, weights=fwd.astype(float), minlength=nE)
    bad = (~boundary_edge) & (nfwd != 1)
    if bad.any():
        F = int(np.flatnonzero(bad)[0])
        raise MeshError(f"inconsistent orientation on edge ({a[first[F]]}, {b[first[F]]})")

    edges = np.column_stack([np.minimum(a, b)[first], np.maximum(a, b)[first]])
    # boundary edges follow their element's ccw traversal
    edges[boundary_edge] = np.column_stack([a[first], b[first]])[boundary_edge]
    occ_bnd = boundary_edge[inv]
    sign = np.where(occ_bnd | fwd, 1, -1)
    edge_elements = np.full((nE, 2), -1, dtype=np.int64)
    minus = sign == 1
    edge_elements[inv[minus], 0] = elem[minus]
    edge_elements[inv[~minus], 1] = elem[~minus]

    tags = np.zeros(nE, dtype=np.int64)
    bidx = np.flatnonzero(boundary_edge)
    if check_conformity and len(bidx):
        _check_hanging(vertices, edges[bidx])
    tags[bidx] = _tags_from_spec(boundary, vertices, edges[bidx])

    return Mesh(
        vertices=vertices,
        triangles=triangles,
        subdomain=subdomain,
        edges=edges,
        tri_edges=inv.reshape(nT, 3),
        tri_signs=sign.reshape(nT, 3),
        edge_elements=edge_elements,
        boundary_tag=tags,
    )


# ---------------------------------------------------------------------------
# sign functions
# ---------------------------------------------------------------------------

def sign_mu(mesh: Mesh, K: int, F: int) -> int:
    """mu_K(F): +1 iff the outward normal of K on F equals n_F."""
    return int(mesh.tri_signs[K, mesh.local_edge(K, F)])


def sign_chi(mesh: Mesh, F: int, Fp: int) -> int:
    """chi_F(F'): +1 if the vertex shared with F is e_{F'}, -1 if it is s_{F'}."""
    if F == Fp:
        raise MeshError("chi_F is not defined on F itself")
    patch = [K for K in mesh.edge_elements[F] if K >= 0]
    if not any(Fp in mesh.tri_edges[K] for K in patch):
        raise MeshError(f"edge {Fp} is not adjacent to edge {F} through omega_F")
    shared = set(mesh.edges[F].tolist()) & set(mesh.edges[Fp].tolist())
    if len(shared) != 1:
        raise MeshError(f"edges {F} and {Fp} do not share exactly one vertex")
    v = shared.pop()
    return 1 if v == mesh.edges[Fp, 1] else -1


# ---------------------------------------------------------------------------
# refinement and marking
# ---------------------------------------------------------------------------

def refine(mesh: Mesh, marked, max_sweeps: int = 1000) -> Mesh:
    """Newest-vertex bisection of the marked elements plus conformity closure."""
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked, dtype=np.int64))
    if len(marked) == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_elements:
        raise MeshError("marked element id out of range")
    te = mesh.tri_edges
    flag = np.zeros(mesh.n_edges, dtype=bool)
    flag[te[marked, 0]] = True
    for _ in range(max_sweeps):
        need = flag[te].any(axis=1) & ~flag[te[:, 0]]
        if not need.any():
            break
        flag[te[need, 0]] = True
    else:
        raise RefinementError(f"conformity closure did not terminate in {max_sweeps} sweeps "
                              f"({int(need.sum())} elements still inconsistent)")

    split = np.flatnonzero(flag)
    nV = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[mesh.edges[split, 0]] + mesh.vertices[mesh.edges[split, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    new_id = nV + np.arange(len(split))
    nTot = len(vertices)
    skeys = np.minimum(mesh.edges[split, 0], mesh.edges[split, 1]) * nTot + np.maximum(mesh.edges[split, 0], mesh.edges[split, 1])
    order = np.argsort(skeys)
    skeys, new_id_sorted = skeys[order], new_id[order]

    tris = mesh.triangles.copy()
    sub = mesh.subdomain.copy()
    for _ in range(4):
        k = np.minimum(tris[:, 1], tris[:, 2]) * nTot + np.maximum(tris[:, 1], tris[:, 2])
        pos = np.clip(np.searchsorted(skeys, k), 0, len(skeys) - 1)
        hit = skeys[pos] == k
        if not hit.any():
            break
        m = new_id_sorted[pos[hit]]
        p, a, b = tris[hit, 0], tris[hit, 1], tris[hit, 2]
        c1 = np.column_stack([m, p, a])
        c2 = np.column_stack([m, b, p])
        keep = ~hit
        tris = np.vstack([tris[keep], c1, c2])
        sub = np.concatenate([sub[keep], sub[hit], sub[hit]])
    else:
        raise RefinementError("bisection did not resolve all marked edges")

    bnd = np.flatnonzero(mesh.boundary_tag != INTERIOR)
    spec_pairs, spec_tags = [], []
    mid_of = np.full(mesh.n_edges, -1, dtype=np.int64)
    mid_of[split] = new_id
    for F in bnd:
        s, e = mesh.edges[F]
        t = _CHAR_FROM_TAG[int(mesh.boundary_tag[F])]
        if mid_of[F] >= 0:
            spec_pairs += [(s, mid_of[F]), (mid_of[F], e)]
            spec_tags += [t, t]
        else:
            spec_pairs.append((s, e))
            spec_tags.append(t)
    spec = [(i, j, t) for (i, j), t in zip(spec_pairs, spec_tags)]
    return build_topology(vertices, tris, sub, spec, tag_longest=False, check_conformity=False)


def refine_uniform(mesh: Mesh, times: int = 1) -> Mesh:
    for _ in range(times):
        mesh = refine(mesh, np.arange(mesh.n_elements))
    return mesh


def dorfler_mark(indicators, theta: float) -> np.ndarray:
    """Minimal set M with sum_M eta_K^2 >= theta * sum eta_K^2.

    Greedy by descending indicator, ties broken by ascending element id.
    """
    eta = np.asarray(indicators, dtype=float)
    if not np.all(np.isfinite(eta)) or np.any(eta < 0):
        raise ValueError("indicators must be finite and nonnegative")
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    e2 = eta * eta
    total = e2.sum()
    if total == 0.0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(len(eta)), -e2))
    csum = np.cumsum(e2[order])
    n = int(np.searchsorted(csum, theta * total * (1.0 - 1e-14), side="left")) + 1
    n = min(n, int(np.count_nonzero(e2)))
    return np.sort(order[:n])


# ---------------------------------------------------------------------------
# initial meshes
# ---------------------------------------------------------------------------

def criss_cross(n: int, lower=(-1.0, -1.0), upper=(1.0, 1.0), boundary=None, subdomain_of=None) -> Mesh:
    """n x n squares, each split into 4 triangles through its center."""
    x = np.linspace(lower[0], upper[0], n + 1)
    y = np.linspace(lower[1], upper[1], n + 1)
    X, Y = np.meshgrid(x, y, indexing="ij")
    corners = np.column_stack([X.ravel(), Y.ravel()])
    cx = 0.5 * (x[:-1] + x[1:])
    cy = 0.5 * (y[:-1] + y[1:])
    CX, CY = np.meshgrid(cx, cy, indexing="ij")
    centers = np.column_stack([CX.ravel(), CY.ravel()])
    vertices = np.vstack([corners, centers])
    nc = (n + 1) ** 2
    tris = []
    for i in range(n):
        for j in range(n):
            v00 = i * (n + 1) + j
            v10 = (i + 1) * (n + 1) + j
            v11 = (i + 1) * (n + 1) + j + 1
            v01 = i * (n + 1) + j + 1
            c = nc + i * n + j
            tris += [(c, v00, v10), (c, v10, v11), (c, v11, v01), (c, v01, v00)]
    tris = np.array(tris, dtype=np.int64)
    sub = None
    if subdomain_of is not None:
        cent = vertices[tris].mean(axis=1)
        sub = np.asarray(subdomain_of(cent), dtype=np.int64)
    return build_topology(vertices, tris, sub, boundary)


def lshape_fan(boundary=None) -> Mesh:
    """Six right isosceles triangles around the re-entrant corner of
    (-1,1)^2 minus [0,1]x[-1,0]."""
    vertices = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1]], dtype=float)
    tris = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 5], [0, 5, 6], [0, 6, 7]])
    return build_topology(vertices, tris, None, boundary)


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

def write_mesh(path, mesh: Mesh) -> None:
    lines = ["mesh2d v1", f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.n_elements}")
    lines += [f"{i} {j} {k} {s}" for (i, j, k), s in zip(mesh.triangles.tolist(), mesh.subdomain.tolist())]
    bnd = np.flatnonzero(mesh.boundary_tag != INTERIOR)
    lines.append(f"boundary {len(bnd)}")
    lines += [f"{mesh.edges[F, 0]} {mesh.edges[F, 1]} {_CHAR_FROM_TAG[int(mesh.boundary_tag[F])]}" for F in bnd]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        tokens = [ln.split() for ln in fh if ln.strip()]
    if tokens[0] != ["mesh2d", "v1"]:
        raise MeshError("not a 'mesh2d v1' file")
    pos = 1

    def section(name):
        nonlocal pos
        head = tokens[pos]
        if head[0] != name:
            raise MeshError(f"expected section {name!r}, found {head[0]!r}")
        n = int(head[1])
        rows = tokens[pos + 1: pos + 1 + n]
        pos += 1 + n
        return rows

    verts = np.array([[float(a), float(b)] for a, b in section("vertices")])
    trows = section("triangles")
    tris = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in trows], dtype=np.int64)
    sub = np.array([int(r[3]) if len(r) > 3 else 0 for r in trows], dtype=np.int64)
    spec = [(int(a), int(b), t) for a, b, t in section("boundary")]
    # stored triangles already carry their newest vertex first
    return build_topology(verts, tris, sub, spec, tag_longest=False)
