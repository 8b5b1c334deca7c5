"""Conforming triangulations with newest-vertex-bisection refinement.

Triangles are stored as vertex triples ``(v0, v1, v2)`` where ``v0`` is the
newest vertex and ``(v1, v2)`` is the refinement edge.  Local edge ``k`` is the
edge opposite local vertex ``k``, so local edge 0 is always the refinement edge.

Meshes are immutable: every refinement returns a new :class:`Mesh`.  Vertices
of the parent keep their indices in the child mesh and new vertices (edge
midpoints) are appended, which makes prolongation of P1 functions a matter of
averaging the two parent endpoints of each new vertex.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

DEDUP_TOL = 1e-12


class MeshError(ValueError):
    """Raised for invalid meshes or invalid refinement requests."""


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class Mesh:
    """A conforming 2D triangulation.

    Parameters
    ----------
    vertices : (N, 2) float array
    triangles : (T, 3) int array, ``(newest, a, b)`` with ``(a, b)`` the
        refinement edge
    boundary : (N,) bool array, True for vertices on the domain boundary
    generation : (T,) int array, number of bisections since the initial mesh
    parent_edges : (N - n_parent_vertices, 2) int array or None
        Endpoints (in the parent mesh) of the edge each new vertex bisects.
    """

    def __init__(self, vertices, triangles, boundary, generation=None,
                 parent_edges=None, n_parent_vertices=None):
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        boundary = np.asarray(boundary, dtype=bool)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (N, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (T, 3)")
        if boundary.shape != (len(vertices),):
            raise MeshError("boundary flags must have one entry per vertex")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise MeshError("triangle references a vertex index out of range")
        if generation is None:
            generation = np.zeros(len(triangles), dtype=np.int64)
        self.vertices = _freeze(vertices)
        self.triangles = _freeze(triangles)
        self.boundary = _freeze(boundary)
        self.generation = _freeze(np.asarray(generation, dtype=np.int64))
        self.parent_edges = None if parent_edges is None else _freeze(
            np.asarray(parent_edges, dtype=np.int64).reshape(-1, 2))
        self.n_parent_vertices = n_parent_vertices
        # per-mesh memo used by the fem layer (patterns, quadrature tables)
        self._cache = {}
        if np.any(self.signed_areas <= 0.0):
            bad = np.flatnonzero(self.signed_areas <= 0.0)[:5]
            raise MeshError(f"degenerate or clockwise triangles: {bad.tolist()}")

    # -- construction ---------------------------------------------------
    @classmethod
    def from_triangles(cls, vertices, triangles, boundary=None):
        """Build a mesh assigning refinement edges by the longest-edge rule.

        Ties between equally long edges go to the edge whose sorted vertex
        pair is lexicographically smallest.  Triangles are reoriented
        counter-clockwise.  Boundary flags are derived from the topology when
        not given.
        """
        vertices = np.asarray(vertices, dtype=float)
        tris = np.asarray(triangles, dtype=np.int64).copy()
        out = np.empty_like(tris)
        for t, (a, b, c) in enumerate(tris):
            best = None
            for opp, (p, q) in ((a, (b, c)), (b, (c, a)), (c, (a, b))):
                length = float(np.sum((vertices[p] - vertices[q]) ** 2))
                key = (-length, min(p, q), max(p, q))
                if best is None or _longer(key, best[0]):
                    best = (key, opp, p, q)
            _, n, p, q = best
            out[t] = (n, p, q)
        area = _signed_areas(vertices, out)
        cw = area < 0
        out[cw] = out[cw][:, [0, 2, 1]]
        if boundary is None:
            boundary = _topological_boundary(len(vertices), out)
        return cls(vertices, out, boundary)

    # -- basic geometry ---------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def signed_areas(self):
        return _signed_areas(self.vertices, self.triangles)

    @property
    def areas(self):
        return self.signed_areas

    @cached_property
    def _edge_data(self):
        t = self.triangles
        local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        tri_edges = inverse.reshape(-1, 3)
        count = np.bincount(inverse.ravel(), minlength=len(edges))
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        order = np.argsort(inverse.ravel(), kind="stable")
        owner = order // 3
        first = np.searchsorted(inverse.ravel()[order], np.arange(len(edges)))
        edge_tris[:, 0] = owner[first]
        two = count == 2
        edge_tris[two, 1] = owner[first[two] + 1]
        return _freeze(edges), _freeze(tri_edges), _freeze(count), _freeze(edge_tris)

    @property
    def edges(self):
        """(E, 2) sorted vertex pairs, lexicographic order."""
        return self._edge_data[0]

    @property
    def tri_edges(self):
        """(T, 3) edge index of local edge k (opposite local vertex k)."""
        return self._edge_data[1]

    @property
    def edge_triangles(self):
        """(E, 2) adjacent triangles, second entry -1 on boundary edges."""
        return self._edge_data[3]

    @cached_property
    def boundary_edges(self):
        return _freeze(self._edge_data[2] == 1)

    @cached_property
    def interior_vertices(self):
        return _freeze(np.flatnonzero(~self.boundary))

    @cached_property
    def vertex_to_dof(self):
        """Map vertex index to interior dof index (-1 on the boundary)."""
        m = np.full(self.n_vertices, -1, dtype=np.int64)
        m[self.interior_vertices] = np.arange(len(self.interior_vertices))
        return _freeze(m)

    @property
    def n_dofs(self):
        return len(self.interior_vertices)

    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    def min_angle(self):
        """Smallest interior angle over all triangles, in radians."""
        p = self.vertices[self.triangles]
        angles = []
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cos = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return float(np.min(angles))

    def is_conforming(self):
        """Edge-incidence scan: no edge in more than two triangles, every
        edge with a single neighbour lies between boundary vertices and has
        no vertex sitting at its midpoint (a hanging node)."""
        edges, _, count, _ = self._edge_data
        if np.any(count > 2):
            return False
        single = edges[count == 1]
        if not np.all(self.boundary[single]):
            return False
        mids = self.vertices[single].mean(axis=1)
        tree = cKDTree(self.vertices)
        dist, _ = tree.query(mids)
        return bool(np.all(dist > DEDUP_TOL))

    def __eq__(self, other):
        return self is other

    __hash__ = object.__hash__

    def __repr__(self):
        return f"Mesh(n_vertices={self.n_vertices}, n_triangles={self.n_triangles})"


def _longer(key, other):
    return key < other


def _signed_areas(vertices, triangles):
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _topological_boundary(n_vertices, triangles):
    local = np.concatenate([triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]])
    pairs = np.sort(local, axis=1)
    edges, count = np.unique(pairs, axis=0, return_counts=True)
    flags = np.zeros(n_vertices, dtype=bool)
    flags[edges[count == 1].ravel()] = True
    return flags


# ---------------------------------------------------------------------------
# detail nodes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetailNodeSet:
    """Midpoints of the interior edges of a mesh.

    ``edge_ids`` index into ``mesh.edges``; ``triangles`` holds the two
    triangles sharing each edge.  Entries are ordered by edge index.
    """

    edge_ids: np.ndarray
    coords: np.ndarray
    triangles: np.ndarray

    def __len__(self):
        return len(self.edge_ids)


def detail_nodes(mesh):
    cached = mesh._cache.get("detail_nodes")
    if cached is None:
        ids = np.flatnonzero(~mesh.boundary_edges)
        coords = mesh.vertices[mesh.edges[ids]].mean(axis=1)
        cached = DetailNodeSet(_freeze(ids), _freeze(coords), _freeze(mesh.edge_triangles[ids]))
        mesh._cache["detail_nodes"] = cached
    return cached


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

def _close_marking(mesh, marked):
    """Mark refinement edges until every triangle with a marked edge also has
    its refinement edge marked."""
    te = mesh.tri_edges
    marked = marked.copy()
    while True:
        touched = marked[te].any(axis=1)
        need = touched & ~marked[te[:, 0]]
        if not need.any():
            return marked
        marked[te[need, 0]] = True


def _bisect(mesh, marked):
    marked = _close_marking(mesh, marked)
    n = mesh.n_vertices
    new_ids = np.full(len(mesh.edges), -1, dtype=np.int64)
    edge_idx = np.flatnonzero(marked)
    new_ids[edge_idx] = n + np.arange(len(edge_idx))
    parents = mesh.edges[edge_idx]
    coords = np.concatenate([mesh.vertices, mesh.vertices[parents].mean(axis=1)])
    boundary = np.concatenate([mesh.boundary, mesh.boundary_edges[edge_idx]])

    t = mesh.triangles
    v0, v1, v2 = t[:, 0], t[:, 1], t[:, 2]
    m = new_ids[mesh.tri_edges]
    m0, m1, m2 = m[:, 0], m[:, 1], m[:, 2]
    has0, has1, has2 = m0 >= 0, m1 >= 0, m2 >= 0
    gen = mesh.generation

    children = []  # (parent index, local order, triple, generation)

    def emit(mask, order, tri, extra):
        idx = np.flatnonzero(mask)
        if len(idx):
            children.append((idx, np.full(len(idx), order), np.stack([a[idx] for a in tri], axis=1),
                             gen[idx] + extra))

    emit(~has0, 0, (v0, v1, v2), 0)
    # first child of the refinement-edge bisection: (m0, v0, v1), split along edge 2
    emit(has0 & ~has2, 0, (m0, v0, v1), 1)
    emit(has0 & has2, 0, (m2, m0, v0), 2)
    emit(has0 & has2, 1, (m2, v1, m0), 2)
    # second child: (m0, v2, v0), split along edge 1
    emit(has0 & ~has1, 2, (m0, v2, v0), 1)
    emit(has0 & has1, 2, (m1, m0, v2), 2)
    emit(has0 & has1, 3, (m1, v0, m0), 2)

    parent = np.concatenate([c[0] for c in children])
    order = np.concatenate([c[1] for c in children])
    tris = np.concatenate([c[2] for c in children])
    gens = np.concatenate([c[3] for c in children])
    perm = np.lexsort((order, parent))
    return Mesh(coords, tris[perm], boundary, gens[perm], parent_edges=parents,
                n_parent_vertices=n)


def uniform_refine(mesh, cache=True):
    """Refine every triangle by three bisections (4 children each).

    Children of triangle ``t`` are the triangles ``4t .. 4t+3`` of the result,
    and the midpoint of edge ``e`` becomes vertex ``mesh.n_vertices + e``.
    The result is kept on ``mesh`` unless ``cache`` is False (one-off fine
    meshes would otherwise live as long as their parent).
    """
    cached = mesh._cache.get("uniform")
    if cached is None:
        cached = _bisect(mesh, np.ones(len(mesh.edges), dtype=bool))
        if cache:
            mesh._cache["uniform"] = cached
    return cached


def nvb_refine(mesh, marked):
    """Coarsest NVB refinement containing the marked detail nodes as vertices.

    ``marked`` is a collection of edge indices taken from
    ``detail_nodes(mesh).edge_ids``.
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked,
                                  dtype=np.int64))
    if len(marked) == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= len(mesh.edges) or np.any(mesh.boundary_edges[marked]):
        raise MeshError("marked node is not a detail node of the mesh")
    mask = np.zeros(len(mesh.edges), dtype=bool)
    mask[marked] = True
    return _bisect(mesh, mask)


def prolongate(coarse, fine, values):
    """Exact P1 interpolation of vertex values from ``coarse`` onto ``fine``.

    ``fine`` must be obtained from ``coarse`` by one call to a refinement
    routine.  ``values`` may be (N,) or (N, k).
    """
    if fine is coarse:
        return np.asarray(values)
    if fine.n_parent_vertices != coarse.n_vertices or fine.parent_edges is None:
        raise MeshError("fine mesh is not a direct refinement of the coarse mesh")
    values = np.asarray(values)
    if values.shape[0] != coarse.n_vertices:
        raise MeshError("value array does not match coarse mesh")
    new = 0.5 * (values[fine.parent_edges[:, 0]] + values[fine.parent_edges[:, 1]])
    return np.concatenate([values, new])


def prolongation_matrix(coarse, fine):
    """Sparse (fine.n_vertices, coarse.n_vertices) prolongation operator."""
    import scipy.sparse as sp

    n_c = coarse.n_vertices
    if fine.n_parent_vertices != n_c:
        raise MeshError("fine mesh is not a direct refinement of the coarse mesh")
    n_new = len(fine.parent_edges)
    rows = np.concatenate([np.arange(n_c), np.repeat(np.arange(n_c, n_c + n_new), 2)])
    cols = np.concatenate([np.arange(n_c), fine.parent_edges.ravel()])
    vals = np.concatenate([np.ones(n_c), np.full(2 * n_new, 0.5)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(fine.n_vertices, n_c))


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

def write_mesh(mesh, path):
    """Write ``vertices N triangles T`` followed by vertex and triangle lines."""
    lines = [f"vertices {mesh.n_vertices} triangles {mesh.n_triangles}"]
    for (x, y), b in zip(mesh.vertices.tolist(), mesh.boundary.tolist()):
        lines.append(f"{x!r} {y!r} {int(b)}")
    for a, b, c in mesh.triangles.tolist():
        lines.append(f"{a} {b} {c}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path):
    """Read the text mesh format; coincident vertices (1e-12) are merged."""
    text = Path(path).read_text().split("\n")
    head = text[0].split()
    if len(head) != 4 or head[0] != "vertices" or head[2] != "triangles":
        raise MeshError(f"{path}: bad header {text[0]!r}")
    n, t = int(head[1]), int(head[3])
    body = [ln.split() for ln in text[1:1 + n + t]]
    if len(body) != n + t:
        raise MeshError(f"{path}: expected {n} vertex and {t} triangle lines")
    verts = np.array([[float(r[0]), float(r[1])] for r in body[:n]])
    flags = np.array([int(r[2]) != 0 for r in body[:n]])
    tris = np.array([[int(v) for v in r] for r in body[n:]], dtype=np.int64).reshape(-1, 3)
    pairs = cKDTree(verts).query_pairs(DEDUP_TOL, output_type="ndarray") if n else np.empty((0, 2))
    if len(pairs):
        rep = np.arange(n)
        for i, j in sorted(map(tuple, np.sort(pairs, axis=1).tolist())):
            rep[j] = rep[i]
        keep = np.flatnonzero(rep == np.arange(n))
        new_index = np.full(n, -1)
        new_index[keep] = np.arange(len(keep))
        tris = new_index[rep[tris]]
        flags_merged = np.zeros(len(keep), dtype=bool)
        np.logical_or.at(flags_merged, new_index[rep], flags)
        verts, flags = verts[keep], flags_merged
    return Mesh(verts, tris, flags)
