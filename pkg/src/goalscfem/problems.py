"""Benchmark setups, their initial meshes and reference solutions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import fem
from .goal import GoalDescriptor
from .mesh import Mesh, read_mesh, uniform_refine
from .sparse_grid import NodeFamily, margin

AMPLITUDE = 0.547
SLIT_DELTA = 0.005
MESH_H = 0.25


def fourier_mode(m):
    """(amplitude, beta1, beta2) of the parametric mode h_m, m >= 1."""
    if m < 1:
        raise ValueError("mode index starts at 1")
    k = (math.isqrt(8 * m + 1) - 1) // 2
    b1 = m - k * (k + 1) // 2
    return AMPLITUDE / m ** 2, b1, k - b1


def fourier_coefficient(M, transform="affine"):
    """h_0 = 1 plus the first M Fourier modes."""
    modes = [(1.0, 0, 0)] + [fourier_mode(m) for m in range(1, M + 1)]
    amp, b1, b2 = (np.array(c, dtype=float) for c in zip(*modes))
    return fem.CoefficientField(amp, b1, b2, transform)


@dataclass
class ProblemDefinition:
    name: str
    mesh: Mesh
    coeff: fem.CoefficientField
    rhs: fem.RhsDescriptor
    goal: GoalDescriptor
    family: NodeFamily = field(default_factory=NodeFamily)
    mesh_file: str | None = None

    @property
    def M(self):
        return self.coeff.M


# ---------------------------------------------------------------------------
# initial meshes
# ---------------------------------------------------------------------------

def _structured(nx, ny, x0, y0, h, keep=None, vertex=None):
    """Structured mesh of cells split along the anti-diagonal.

    ``keep(i, j)`` selects cells, ``vertex(i, j, upper)`` returns the vertex
    id for grid node (i, j) seen from a cell above (upper=True) or below.
    """
    ids, verts = {}, []

    def vid(i, j, upper):
        key = vertex(i, j, upper) if vertex else (i, j)
        if key not in ids:
            ids[key] = len(verts)
            verts.append(key)
        return ids[key]

    tris = []
    for j in range(ny):
        for i in range(nx):
            if keep and not keep(i, j):
                continue
            a = vid(i, j, True)
            b = vid(i + 1, j, True)
            c = vid(i, j + 1, False)
            d = vid(i + 1, j + 1, False)
            tris.append((a, b, c))
            tris.append((b, d, c))
    return verts, tris


def lshape_mesh(h=MESH_H):
    n = round(2 / h)
    half = n // 2
    keys, tris = _structured(n, n, -1, -1, h, keep=lambda i, j: i >= half or j >= half)
    xy = np.array([(-1 + i * h, -1 + j * h) for i, j in keys])
    return Mesh.from_triangles(xy, tris)


def square_mesh(h=MESH_H):
    n = round(1 / h)
    keys, tris = _structured(n, n, 0, 0, h)
    xy = np.array([(i * h, j * h) for i, j in keys])
    return Mesh.from_triangles(xy, tris)


def slit_mesh(h=MESH_H, delta=SLIT_DELTA):
    """(-1,1)^2 minus the thin wedge with tip (0, 0) and base x = -1.

    Grid nodes on the slit (y = 0, x < 0) are doubled: cells above use
    (x, delta |x|), cells below use (x, -delta |x|).
    """
    n = round(2 / h)
    half = n // 2

    def vertex(i, j, upper):
        if j == half and i < half:
            # a node on row j is the bottom of the cell above (upper=True)
            return (i, j, 1 if upper else -1)
        return (i, j, 0)

    keys, tris = _structured(n, n, -1, -1, h, vertex=vertex)
    xy = []
    for i, j, s in keys:
        x, y = -1 + i * h, -1 + j * h
        if s:
            y = s * delta * abs(x)
        xy.append((x, y))
    return Mesh.from_triangles(np.array(xy), tris)


MESH_FILES = {"lshape": "lshape.msh", "square": "square.msh", "slit": "slit.msh"}
MESH_BUILDERS = {"lshape": lshape_mesh, "square": square_mesh, "slit": slit_mesh}


def load_mesh(name):
    with resources.as_file(resources.files("goalscfem") / "data" / MESH_FILES[name]) as p:
        return read_mesh(p)


# ---------------------------------------------------------------------------
# setups
# ---------------------------------------------------------------------------

S_BOX = (0.25, 0.75, 0.25, 0.75)
T_F = ((0.0, 0.0), (0.5, 0.0), (0.0, 0.5))
T_Q = ((0.5, 1.0), (1.0, 0.5), (1.0, 1.0))
T_CONV = ((0.0, 1.0), (1.0, 0.0), (1.0, 1.0))
MOLLIFIER = ((0.4, -0.5), 0.15)


def setup(setup_id, family="clenshaw_curtis"):
    fam = NodeFamily(family)
    if setup_id == 1:
        return ProblemDefinition("setup1", load_mesh("lshape"), fourier_coefficient(4, "affine"),
                                 fem.RhsDescriptor("constant_one"),
                                 GoalDescriptor("linear_weight", fem.Weight("box", S_BOX)),
                                 fam, MESH_FILES["lshape"])
    if setup_id == 2:
        return ProblemDefinition("setup2", load_mesh("slit"), fourier_coefficient(4, "exponential"),
                                 fem.RhsDescriptor("constant_one"),
                                 GoalDescriptor("linear_weight", fem.Weight("mollifier", MOLLIFIER)),
                                 fam, MESH_FILES["slit"])
    if setup_id == 3:
        return ProblemDefinition("setup3", load_mesh("square"), fourier_coefficient(4, "affine"),
                                 fem.RhsDescriptor("div_field", T_F),
                                 GoalDescriptor("second_moment", fem.Weight("triangle", T_Q), 100.0),
                                 fam, MESH_FILES["square"])
    if setup_id == 4:
        return ProblemDefinition("setup4", load_mesh("lshape"), fourier_coefficient(10, "exponential"),
                                 fem.RhsDescriptor("constant_one"),
                                 GoalDescriptor("convection", fem.Weight("triangle", T_CONV)),
                                 fam, MESH_FILES["lshape"])
    raise ValueError(f"unknown setup {setup_id!r}; expected 1..4")


# ---------------------------------------------------------------------------
# reference values
# ---------------------------------------------------------------------------

@dataclass
class ReferenceResult:
    Q_ref: float
    Q: float
    correction: float
    n_refinements: int
    n_points: int
    n_dofs: int
    index_set: list
    path: str

    def to_dict(self):
        return dict(self.__dict__)


def reference_solve(problem, mesh, index_set, n_refinements=2, max_dofs=None, workers=1):
    """Corrected QoI on I + marg(I) with P1 on uniformly refined ``mesh``."""
    from .adaptive import solve_samples
    from .goal import corrected_qoi
    from .estimators import SamplewiseSolutionSet
    from .sparse_grid import CollocationGrid, reduced_margin

    fine = mesh
    for _ in range(n_refinements):
        fine = uniform_refine(fine, cache=False)
    I_ref = index_set.union(margin(index_set))
    g = CollocationGrid(I_ref, problem.family)
    dofs = fine.n_dofs * len(g)
    if max_dofs is not None and dofs > max_dofs:
        raise MemoryError(f"reference needs {dofs} dofs (cap {max_dofs}); "
                          f"mesh {fine.n_dofs} dofs x {len(g)} points")
    g_hat = None
    if not problem.coeff.is_affine:
        g_hat = CollocationGrid(I_ref.union(reduced_margin(I_ref)), problem.family)
    U, Z = solve_samples(problem, fine, g.coords, workers=workers)
    primal = SamplewiseSolutionSet(fine, g.keys, U)
    dual = SamplewiseSolutionSet(fine, g.keys, Z)
    rec = corrected_qoi(problem.goal, problem.rhs, problem.coeff, g, primal, dual, g_hat)
    return ReferenceResult(rec.Q_tilde, rec.Q, rec.F - rec.B, n_refinements, len(g), dofs,
                           [list(nu) for nu in I_ref], rec.path)


# ---------------------------------------------------------------------------
# custom problems from a flat key = value file
# ---------------------------------------------------------------------------

def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _points(text, n):
    vals = _floats(text)
    if len(vals) != 2 * n:
        raise ValueError(f"expected {n} points, got {text!r}")
    return tuple((vals[2 * i], vals[2 * i + 1]) for i in range(n))


def load_problem(path):
    """Build a :class:`ProblemDefinition` from a key = value file.

    Keys: ``mesh`` (path, relative to the file), ``transform`` (affine or
    exponential), ``M`` (number of Fourier modes) or ``modes`` (``amp b1 b2``
    triples separated by ``;``, the first being h_0), ``rhs``
    (constant_one or div_field) with ``rhs_triangle``, ``goal``
    (linear_weight, second_moment, convection), ``weight`` (box, triangle,
    mollifier) with ``weight_data``, ``scale`` and ``family``.
    """
    from pathlib import Path

    from .config import ConfigError, parse_kv

    path = Path(path)
    kv = parse_kv(path.read_text())
    try:
        mesh_path = Path(kv["mesh"])
        if not mesh_path.is_absolute():
            mesh_path = path.parent / mesh_path
        mesh = read_mesh(mesh_path)
        transform = kv.get("transform", "affine")
        if "modes" in kv:
            rows = [_floats(r) for r in kv["modes"].split(";") if r.strip()]
            amp, b1, b2 = (np.array(c) for c in zip(*rows))
            coeff = fem.CoefficientField(amp, b1, b2, transform)
        else:
            coeff = fourier_coefficient(int(kv.get("M", 4)), transform)
        rhs_kind = kv.get("rhs", "constant_one")
        rhs = fem.RhsDescriptor(rhs_kind, _points(kv["rhs_triangle"], 3)
                                if rhs_kind == "div_field" else None)
        wkind = kv.get("weight", "box")
        data = kv["weight_data"]
        if wkind == "box":
            payload = tuple(_floats(data))
        elif wkind == "triangle":
            payload = _points(data, 3)
        else:
            x, y, r = _floats(data)
            payload = ((x, y), r)
        goal = GoalDescriptor(kv.get("goal", "linear_weight"), fem.Weight(wkind, payload),
                              float(kv.get("scale", 100.0)))
        fam = NodeFamily(kv.get("family", "clenshaw_curtis"))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return ProblemDefinition(path.stem, mesh, coeff, rhs, goal, fam, str(mesh_path))
