"""P1 finite elements on :class:`~goalscfem.mesh.Mesh`.

Vectors handed around by the solvers live on the interior vertices of a mesh
(``mesh.interior_vertices`` order).  Helpers that need nodal values on all
vertices zero-extend them with :func:`to_full`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate

from . import _kernels
from .mesh import Mesh, MeshError, detail_nodes, prolongation_matrix, uniform_refine

# Dunavant rules on the reference triangle, barycentric points, weights sum to 1
_D4_W = (0.223381589678011, 0.109951743655322)
_D4_P = (0.108103018168070, 0.445948490915965, 0.816847572980459, 0.091576213509771)


def _perm3(a, b):
    return [(a, b, b), (b, a, b), (b, b, a)]


DUNAVANT4 = (
    np.array(_perm3(_D4_P[0], _D4_P[1]) + _perm3(_D4_P[2], _D4_P[3])),
    np.array([_D4_W[0]] * 3 + [_D4_W[1]] * 3),
)

_a, _b, _c = 0.048690315425316, 0.312865496004874, 0.638444188569810
DUNAVANT7 = (
    np.array([(1 / 3, 1 / 3, 1 / 3)]
             + _perm3(0.479308067841920, 0.260345966079040)
             + _perm3(0.869739794195568, 0.065130102902216)
             + [(_a, _b, _c), (_a, _c, _b), (_b, _a, _c), (_b, _c, _a), (_c, _a, _b), (_c, _b, _a)]),
    np.array([-0.149570044467682] + [0.175615257433208] * 3 + [0.053347235608838] * 3
             + [0.077113760890257] * 6),
)
RULES = {4: DUNAVANT4, 7: DUNAVANT7}


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


# ---------------------------------------------------------------------------
# per-mesh geometric tables
# ---------------------------------------------------------------------------

def _memo(mesh, key, fn):
    try:
        return mesh._cache[key]
    except KeyError:
        val = mesh._cache[key] = fn()
        return val


def gradients(mesh):
    """(T, 3, 2) constant gradients of the barycentric hats on each triangle."""
    def build():
        p = mesh.vertices[mesh.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        g1 = np.stack([d2[:, 1], -d2[:, 0]], axis=1) / det[:, None]
        g2 = np.stack([-d1[:, 1], d1[:, 0]], axis=1) / det[:, None]
        return np.stack([-g1 - g2, g1, g2], axis=1)
    return _memo(mesh, "grads", build)


def quadrature_points(mesh, order):
    """Physical quadrature points (qx, qy) of shape (T, nq) and weights (nq,)."""
    def build():
        bary, w = RULES[order]
        p = mesh.vertices[mesh.triangles]              # (T, 3, 2)
        xy = np.einsum("qk,tkd->tqd", bary, p)
        return np.ascontiguousarray(xy[..., 0]), np.ascontiguousarray(xy[..., 1]), w
    return _memo(mesh, ("quad", order), build)


# composite rule for oscillatory integrands: sub-triangles of size h_sub with
# k * h_sub <= KH_MAX, k the largest wavenumber of the integrand
KH_MAX = 2.5


def composite_rule(order, level):
    """Rule of the given order on the ``level``-times uniformly split reference
    triangle, as barycentric points and weights summing to one."""
    bary, w = RULES[order]
    tris = [np.eye(3)]
    for _ in range(level):
        nxt = []
        for v in tris:
            m01, m12, m20 = (v[0] + v[1]) / 2, (v[1] + v[2]) / 2, (v[2] + v[0]) / 2
            nxt += [np.array(c) for c in ((v[0], m01, m20), (m01, v[1], m12),
                                          (m20, m12, v[2]), (m12, m20, m01))]
        tris = nxt
    pts = np.concatenate([bary @ v for v in tris])
    return pts, np.tile(w, len(tris)) / len(tris)


def quadrature_groups(mesh, order, wavenumber=0.0):
    """Per-element composite quadrature, grouped by subdivision level.

    Returns a list of ``(element ids, qx, qy, weights)``.  Without a
    wavenumber this is the plain rule on every element.
    """
    def build():
        if wavenumber <= 0:
            qx, qy, w = quadrature_points(mesh, order)
            return [(np.arange(mesh.n_triangles), qx, qy, w)]
        p = mesh.vertices[mesh.triangles]
        diam = np.max(np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2), axis=1)
        lev = np.maximum(0, np.ceil(np.log2(np.maximum(wavenumber * diam / KH_MAX, 1e-300))))
        lev = lev.astype(int)
        if not lev.any():
            qx, qy, w = quadrature_points(mesh, order)
            return [(np.arange(mesh.n_triangles), qx, qy, w)]
        out = []
        for L in np.unique(lev):
            idx = np.flatnonzero(lev == L)
            bary, w = composite_rule(order, int(L))
            xy = np.einsum("qk,tkd->tqd", bary, p[idx])
            out.append((idx, np.ascontiguousarray(xy[..., 0]), np.ascontiguousarray(xy[..., 1]), w))
        return out
    return _memo(mesh, ("quad_groups", order, float(wavenumber)), build)


def _local_gram(mesh):
    # grad_i . grad_j, symmetric by construction
    g = gradients(mesh)
    return _memo(mesh, "local_gram", lambda: np.einsum("tid,tjd->tij", g, g))


def to_full(mesh, u):
    u = np.asarray(u)
    out = np.zeros((mesh.n_vertices,) + u.shape[1:], dtype=u.dtype)
    out[mesh.interior_vertices] = u
    return out


# ---------------------------------------------------------------------------
# coefficient
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CoefficientField:
    """a(x, y) = T(h_0(x) + sum_m y_m h_m(x)) with T = id or exp.

    Each mode is ``amp * cos(2 pi b1 x1) * cos(2 pi b2 x2)``; mode 0 is h_0.
    """

    amp: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    transform: str = "affine"

    def __post_init__(self):
        if self.transform not in ("affine", "exponential"):
            raise ValueError(f"unknown transform {self.transform!r}")
        for name in ("amp", "b1", "b2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.amp.shape == self.b1.shape == self.b2.shape) or self.amp.ndim != 1:
            raise ValueError("mode arrays must be 1D of equal length")

    @property
    def M(self):
        return len(self.amp) - 1

    @property
    def is_affine(self):
        return self.transform == "affine"

    @property
    def quad_order(self):
        return 4 if self.is_affine else 7

    def modes(self, idx):
        """Restrict to a subset of modes (index 0 must be included)."""
        idx = list(idx)
        return CoefficientField(self.amp[idx], self.b1[idx], self.b2[idx], self.transform)

    def deterministic(self):
        """The same field with all parametric amplitudes set to zero."""
        amp = self.amp.copy()
        amp[1:] = 0.0
        return CoefficientField(amp, self.b1, self.b2, self.transform)

    def _yext(self, y):
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != self.M:
            raise ValueError(f"parameter has length {len(y)}, expected {self.M}")
        return np.concatenate([[1.0], y])

    def h(self, x, y):
        x = np.atleast_2d(x)
        c = self.amp * self._yext(y)
        return (np.cos(2 * np.pi * np.outer(x[:, 0], self.b1))
                * np.cos(2 * np.pi * np.outer(x[:, 1], self.b2))) @ c

    def __call__(self, x, y):
        h = self.h(x, y)
        return h if self.is_affine else np.exp(h)

    def h_bounds(self):
        """Interval enclosure of h over D x [-1, 1]^M."""
        if self.b1[0] == 0 and self.b2[0] == 0:
            lo = hi = self.amp[0]
        else:
            lo, hi = -abs(self.amp[0]), abs(self.amp[0])
        s = float(np.sum(np.abs(self.amp[1:])))
        return lo - s, hi + s

    def bounds(self):
        lo, hi = self.h_bounds()
        return (lo, hi) if self.is_affine else (float(np.exp(lo)), float(np.exp(hi)))

    @property
    def wavenumber(self):
        """Largest wavenumber of the modes; drives the composite quadrature
        of the exponential transform (affine modes use the plain rule)."""
        if self.is_affine:
            return 0.0
        return float(2 * np.pi * np.max(np.abs(self.b1) + np.abs(self.b2)))

    def element_integrals(self, mesh, y, check=True):
        """(T,) integrals of a(., y) over each triangle."""
        yext = self._yext(y)
        out = np.empty(mesh.n_triangles)
        vmin = np.inf
        for idx, qx, qy, w in quadrature_groups(mesh, self.quad_order, self.wavenumber):
            vals, vm = _kernels.coeff_integrals(qx, qy, w, mesh.areas[idx], self.amp, self.b1,
                                                self.b2, yext, not self.is_affine)
            out[idx] = vals
            vmin = min(vmin, vm)
        if check and not vmin > 0.0:
            raise ValueError(f"coefficient not positive at a quadrature point (min {vmin:.3e})")
        return out

    def mode_integrals(self, mesh):
        """(T, M+1) integrals of each (untransformed) mode; affine setting only."""
        def build():
            qx, qy, w = quadrature_points(mesh, self.quad_order)
            out = np.empty((mesh.n_triangles, self.M + 1))
            for m in range(self.M + 1):
                e = np.zeros(self.M + 1)
                e[m] = 1.0
                out[:, m] = _kernels.coeff_integrals(qx, qy, w, mesh.areas, self.amp, self.b1,
                                                     self.b2, e, False)[0]
            return out
        return _memo(mesh, ("modes", self.amp.tobytes(), self.b1.tobytes(), self.b2.tobytes()), build)


# ---------------------------------------------------------------------------
# stiffness
# ---------------------------------------------------------------------------

def _pattern(mesh, interior):
    def build():
        t = mesh.triangles
        dof = mesh.vertex_to_dof if interior else np.arange(mesh.n_vertices)
        n = mesh.n_dofs if interior else mesh.n_vertices
        r = np.repeat(dof[t], 3, axis=1).ravel()
        c = np.tile(dof[t], (1, 3)).ravel()
        keep = (r >= 0) & (c >= 0)
        key = r[keep] * n + c[keep]
        ukey, inv = np.unique(key, return_inverse=True)
        rows, cols = ukey // n, ukey % n
        indptr = np.searchsorted(rows, np.arange(n + 1))
        return keep, inv, cols, indptr, n
    return _memo(mesh, ("pattern", interior), build)


def assemble_from_element(mesh, a_int, interior=True):
    """Stiffness matrix sum_K (int_K a) grad phi_j . grad phi_i."""
    keep, inv, cols, indptr, n = _pattern(mesh, interior)
    local = (a_int[:, None, None] * _local_gram(mesh)).ravel()[keep]
    data = np.bincount(inv, weights=local, minlength=len(cols))
    return sp.csr_matrix((data, cols, indptr), shape=(n, n))


def assemble_stiffness(mesh, coeff, y, interior=True):
    """Samplewise stiffness matrix for a(., y) on interior dofs."""
    return assemble_from_element(mesh, coeff.element_integrals(mesh, y), interior)


def laplacian(mesh, interior=True):
    return _memo(mesh, ("laplacian", interior),
                 lambda: assemble_from_element(mesh, mesh.areas.copy(), interior))


def mode_matrices(mesh, coeff):
    """Stiffness matrices of the individual modes h_0 .. h_M."""
    ints = coeff.mode_integrals(mesh)
    return [assemble_from_element(mesh, ints[:, m].copy()) for m in range(coeff.M + 1)]


# ---------------------------------------------------------------------------
# loads and weights
# ---------------------------------------------------------------------------

def _in_triangle(pts, tri, tol=1e-12):
    a, b, c = (np.asarray(v, dtype=float) for v in tri)
    det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    l1 = ((pts[:, 0] - a[0]) * (c[1] - a[1]) - (pts[:, 1] - a[1]) * (c[0] - a[0])) / det
    l2 = ((b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])) / det
    lam = np.stack([1 - l1 - l2, l1, l2], axis=1)
    return lam.min(axis=1) >= -tol, lam.min(axis=1) > tol


def _in_box(pts, box, tol=1e-12):
    x0, x1, y0, y1 = box
    x, y = pts[:, 0], pts[:, 1]
    closed = (x >= x0 - tol) & (x <= x1 + tol) & (y >= y0 - tol) & (y <= y1 + tol)
    openi = (x > x0 + tol) & (x < x1 - tol) & (y > y0 + tol) & (y < y1 - tol)
    return closed, openi


def _resolved_mask(mesh, inside):
    """Element indicator of a polygonal subdomain that the mesh must resolve."""
    cen_closed, cen_open = inside(mesh.centroids())
    v_closed, v_open = inside(mesh.vertices)
    tv_closed = v_closed[mesh.triangles].all(axis=1)
    tv_open = v_open[mesh.triangles].any(axis=1)
    bad = (cen_open & ~tv_closed) | (~cen_closed & tv_open)
    if np.any(bad):
        raise MeshError("subdomain is not resolved by the mesh")
    return cen_open


@dataclass(frozen=True)
class Weight:
    """Goal weight q.  ``kind`` is ``box`` (payload x0, x1, y0, y1),
    ``triangle`` (payload three vertices) or ``mollifier`` (payload x0, r).
    Box and triangle weights are normalised characteristic functions."""

    kind: str
    payload: tuple

    def __post_init__(self):
        if self.kind not in ("box", "triangle", "mollifier"):
            raise ValueError(f"unknown weight kind {self.kind!r}")

    @property
    def measure(self):
        if self.kind == "box":
            x0, x1, y0, y1 = self.payload
            return (x1 - x0) * (y1 - y0)
        if self.kind == "triangle":
            (ax, ay), (bx, by), (cx, cy) = self.payload
            return 0.5 * abs((bx - ax) * (cy - ay) - (by - ay) * (cx - ax))
        return None

    def element_mask(self, mesh):
        if self.kind == "box":
            return _resolved_mask(mesh, lambda p: _in_box(p, self.payload))
        return _resolved_mask(mesh, lambda p: _in_triangle(p, self.payload))

    def mollifier_constant(self):
        _, r = self.payload
        val, _ = integrate.quad(lambda s: np.exp(-r * r / (r * r - s * s)) * s, 0.0, r,
                                epsabs=1e-15, epsrel=1e-13)
        return 1.0 / (2.0 * np.pi * val)

    def __call__(self, x):
        x = np.atleast_2d(x)
        if self.kind == "mollifier":
            c0, r = self.payload
            d2 = np.sum((x - np.asarray(c0)) ** 2, axis=1)
            out = np.zeros(len(x))
            inside = d2 < r * r
            out[inside] = self.mollifier_constant() * np.exp(-r * r / (r * r - d2[inside]))
            return out
        inside = (_in_box(x, self.payload) if self.kind == "box"
                  else _in_triangle(x, self.payload))[0]
        return inside / self.measure

    def local_loads(self, mesh):
        """(T, 3) integrals of q times each local hat."""
        def build():
            if self.kind == "mollifier":
                bary, w = DUNAVANT7
                qx, qy, _ = quadrature_points(mesh, 7)
                q = self(np.stack([qx.ravel(), qy.ravel()], axis=1)).reshape(qx.shape)
                return mesh.areas[:, None] * ((q * w) @ bary)
            val = self.element_mask(mesh) * mesh.areas / (3.0 * self.measure)
            return np.repeat(val[:, None], 3, axis=1)
        return _memo(mesh, ("wloads", self), build)


def weight_load(mesh, weight, interior=True):
    """Vector of int q phi_i."""
    out = np.bincount(mesh.triangles.ravel(), weights=weight.local_loads(mesh).ravel(),
                      minlength=mesh.n_vertices)
    return out[mesh.interior_vertices] if interior else out


def weighted_integral(mesh, weight, u):
    """int_D q u for an interior-dof vector u."""
    return float(weight_load(mesh, weight) @ np.asarray(u))


def convection_matrix(mesh, weight, interior=True):
    """[B]_{ij} = int q phi_i (d1 phi_j + d2 phi_j)."""
    def build():
        L = weight.local_loads(mesh)                        # (T, 3) int_K q phi_i
        G = gradients(mesh).sum(axis=2)                    # (T, 3) d1+d2 of phi_j
        local = L[:, :, None] * G[:, None, :]
        t = mesh.triangles
        r = np.repeat(t, 3, axis=1).ravel()
        c = np.tile(t, (1, 3)).ravel()
        B = sp.csr_matrix((local.ravel(), (r, c)), shape=(mesh.n_vertices,) * 2)
        if interior:
            iv = mesh.interior_vertices
            B = B[iv][:, iv]
        return B.tocsr()
    return _memo(mesh, ("convection", weight, interior), build)


def convection_pair(mesh, weight, u, v):
    """int_D q u (d1 v + d2 v) for interior-dof vectors."""
    u, v = np.asarray(u), np.asarray(v)
    if len(u) != mesh.n_dofs or len(v) != mesh.n_dofs:
        raise MeshError("vectors do not belong to this mesh")
    return float(u @ (convection_matrix(mesh, weight) @ v))


@dataclass(frozen=True)
class RhsDescriptor:
    """Right-hand side F.  ``constant_one``: F(v) = int v.  ``div_field``:
    F(v) = -int_{T_f} d1 v, with ``triangle`` the vertices of T_f."""

    kind: str = "constant_one"
    triangle: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("constant_one", "div_field"):
            raise ValueError(f"unknown rhs kind {self.kind!r}")
        if self.kind == "div_field" and self.triangle is None:
            raise ValueError("div_field needs a triangle")

    def local_loads(self, mesh):
        def build():
            if self.kind == "constant_one":
                return np.repeat((mesh.areas / 3.0)[:, None], 3, axis=1)
            mask = _resolved_mask(mesh, lambda p: _in_triangle(p, self.triangle))
            return -(mask * mesh.areas)[:, None] * gradients(mesh)[:, :, 0]
        return _memo(mesh, ("rhs", self), build)


def assemble_load(mesh, rhs, interior=True):
    out = np.bincount(mesh.triangles.ravel(), weights=rhs.local_loads(mesh).ravel(),
                      minlength=mesh.n_vertices)
    return out[mesh.interior_vertices] if interior else out


# ---------------------------------------------------------------------------
# linear solves
# ---------------------------------------------------------------------------

class Factorization:
    """Sparse LU of an SPD matrix, reused for several right-hand sides."""

    def __init__(self, A, rtol=1e-10):
        self.A = A.tocsc()
        self.rtol = rtol
        self._lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A") if A.shape[0] else None

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self._lu is None:
            return np.zeros_like(b)
        x = self._lu.solve(b)
        _check_residual(self.A, x, b, self.rtol)
        return x


class AMGSolver:
    """Smoothed-aggregation AMG preconditioned CG; the hierarchy is built once
    and reused for several right-hand sides."""

    def __init__(self, A, rtol=1e-10, inner_rtol=1e-12, maxiter=500):
        import pyamg

        self.A = sp.csr_matrix(A)
        self.rtol, self.inner_rtol, self.maxiter = rtol, inner_rtol, maxiter
        self._ml = pyamg.smoothed_aggregation_solver(self.A) if A.shape[0] else None

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self._ml is None or not np.any(b):
            return np.zeros_like(b)
        x = self._ml.solve(b, tol=self.inner_rtol, accel="cg", maxiter=self.maxiter)
        _check_residual(self.A, x, b, self.rtol)
        return x


AUTO_AMG_DOFS = 20_000


def make_solver(A, method="auto", rtol=1e-10):
    """Reusable solver object with a ``solve(b)`` method.

    ``auto`` picks sparse LU below :data:`AUTO_AMG_DOFS` unknowns and AMG-CG
    above; ``cg`` is Jacobi-preconditioned CG.
    """
    if method == "auto":
        method = "direct" if A.shape[0] < AUTO_AMG_DOFS else "amg"
    if method == "direct":
        return Factorization(A, rtol)
    if method == "amg":
        return AMGSolver(A, rtol)
    if method == "cg":
        class _CG:
            def solve(_, b):
                return solve(A, b, method="cg", rtol=rtol)
        return _CG()
    raise ValueError(f"unknown method {method!r}")


def _check_residual(A, x, b, rtol):
    nb = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b)
    if res > rtol * nb and res > 0:
        raise SolverError(f"residual {res:.3e} exceeds {rtol:g} * |b|", res)


def solve(A, b, method="direct", rtol=1e-10, maxiter=10_000):
    """Solve the SPD system A x = b.

    ``method="direct"`` uses sparse LU, ``"amg"`` AMG-preconditioned CG,
    ``"auto"`` picks by size; ``"cg"`` uses Jacobi-preconditioned conjugate
    gradients with an iteration cap.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if method in ("direct", "amg", "auto"):
        return make_solver(A, method, rtol).solve(b)
    if method != "cg":
        raise ValueError(f"unknown method {method!r}")
    d = A.diagonal()
    M = sp.diags(1.0 / d)
    x, info = spla.cg(A, b, rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    res = np.linalg.norm(A @ x - b)
    if info != 0 or res > rtol * np.linalg.norm(b) * 1.0001:
        raise SolverError(f"CG did not converge (info={info}, residual {res:.3e})", res)
    return x


def h1_inner(mesh, u, v):
    """int grad u . grad v for interior-dof vectors (or stacks of them)."""
    u, v = np.asarray(u), np.asarray(v)
    if u.shape[-1] != mesh.n_dofs or v.shape[-1] != mesh.n_dofs:
        raise MeshError("vectors do not belong to this mesh")
    return u @ (laplacian(mesh) @ v.T)


# ---------------------------------------------------------------------------
# two-level residuals
# ---------------------------------------------------------------------------

@dataclass
class TwoLevel:
    """Tables linking a mesh to its uniform refinement."""

    mesh: Mesh
    fine: Mesh
    fine_rows: np.ndarray       # fine vertex index of each detail node
    hat_norm: np.ndarray        # ||grad phi_hat|| per detail node
    fine_dof_rows: np.ndarray   # fine interior dof index of each detail node
    parent: np.ndarray = field(repr=False)

    def prolongation(self):
        """(fine dofs, coarse dofs) interior prolongation matrix."""
        P = prolongation_matrix(self.mesh, self.fine)
        return P[self.fine.interior_vertices][:, self.mesh.interior_vertices].tocsr()


def two_level(mesh):
    def build():
        fine = uniform_refine(mesh)
        dn = detail_nodes(mesh)
        rows = mesh.n_vertices + dn.edge_ids
        diag = laplacian(fine, interior=False).diagonal()
        return TwoLevel(mesh, fine, rows, np.sqrt(diag[rows]), fine.vertex_to_dof[rows],
                        np.arange(fine.n_triangles) // 4)
    return _memo(mesh, "two_level", build)


def element_gradient(mesh, u):
    """(T, 2) gradient of the P1 function with interior values u."""
    uf = to_full(mesh, u)
    return np.einsum("tk,tkd->td", uf[mesh.triangles], gradients(mesh))


def two_level_residual(mesh, coeff, y, u, fine_load, nodes=None):
    """Numerators |F(phi_hat) - B_y(u, phi_hat)| and hat norms.

    ``fine_load`` is the load functional evaluated at the fine hats, either an
    array over all fine vertices or over the detail nodes only.  ``nodes``
    optionally selects detail nodes by position in ``detail_nodes(mesh)``.
    """
    tl = two_level(mesh)
    fine = tl.fine
    a_fine = coeff.element_integrals(fine, y)
    r = _kernels.two_level_scatter(fine.triangles, gradients(fine), a_fine, tl.parent,
                                   element_gradient(mesh, u), fine.n_vertices)
    fl = np.asarray(fine_load)
    f_rows = fl[tl.fine_rows] if fl.shape[0] == fine.n_vertices else fl
    num = np.abs(f_rows - r[tl.fine_rows])
    if nodes is not None:
        nodes = np.asarray(nodes)
        if nodes.size and (nodes.min() < 0 or nodes.max() >= len(tl.fine_rows)):
            raise MeshError("node is not a detail node of the mesh")
        return num[nodes], tl.hat_norm[nodes]
    return num, tl.hat_norm
