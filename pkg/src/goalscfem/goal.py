"""Goal functionals, dual loads and the corrected QoI estimate."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import fem
from .sparse_grid import reduced_margin


@dataclass(frozen=True)
class GoalDescriptor:
    """``linear_weight``: Q(v) = int q v.  ``second_moment``: Q(v) =
    scale (int q v)^2.  ``convection``: Q(v) = int q v (d1 v + d2 v)."""

    kind: str
    weight: fem.Weight
    scale: float = 100.0

    def __post_init__(self):
        if self.kind not in ("linear_weight", "second_moment", "convection"):
            raise ValueError(f"unknown goal kind {self.kind!r}")
        if self.kind == "second_moment" and not self.scale > 0:
            raise ValueError("second_moment scale must be positive")

    @property
    def is_linear(self):
        return self.kind == "linear_weight"

    def sample(self, mesh, u):
        """Q(u) for an interior-dof vector."""
        u = np.asarray(u)
        if self.kind == "linear_weight":
            return fem.weighted_integral(mesh, self.weight, u)
        if self.kind == "second_moment":
            return self.scale * fem.weighted_integral(mesh, self.weight, u) ** 2
        return fem.convection_pair(mesh, self.weight, u, u)


def dual_load(goal, mesh, u=None):
    """Load vector of the dual problem: Q(phi_i), or <Q'(u), phi_i>."""
    if goal.is_linear:
        return fem.weight_load(mesh, goal.weight)
    if u is None:
        raise ValueError(f"{goal.kind} dual load needs the primal sample")
    u = np.asarray(u)
    if goal.kind == "second_moment":
        c = 2.0 * goal.scale * fem.weighted_integral(mesh, goal.weight, u)
        return c * fem.weight_load(mesh, goal.weight)
    B = fem.convection_matrix(mesh, goal.weight)
    return B @ u + B.T @ u


def fine_dual_load(goal, mesh, u=None):
    """Dual load at the hats of ``uniform_refine(mesh)`` (all fine vertices),
    linearised at the coarse primal sample for nonlinear goals."""
    tl = fem.two_level(mesh)
    fine = tl.fine
    if goal.is_linear:
        return fem.weight_load(fine, goal.weight, interior=False)
    if u is None:
        raise ValueError(f"{goal.kind} dual load needs the primal sample")
    if goal.kind == "second_moment":
        c = 2.0 * goal.scale * fem.weighted_integral(mesh, goal.weight, u)
        return c * fem.weight_load(fine, goal.weight, interior=False)
    uf = fem.to_full(fine, tl.prolongation() @ np.asarray(u))
    B = fem.convection_matrix(fine, goal.weight, interior=False)
    return B @ uf + B.T @ uf


def fine_dual_load_interior(goal, mesh, u=None):
    """``fine_dual_load`` restricted to the interior dofs of the fine mesh."""
    fine = fem.two_level(mesh).fine
    return fine_dual_load(goal, mesh, u)[fine.interior_vertices]


def qoi_on_interpolant(goal, g, primal):
    """Q(u_SC) for the interpolant of the primal samples on grid ``g``."""
    mesh = primal.mesh
    U = primal.on_grid(g).values
    if goal.kind == "linear_weight":
        q = U @ fem.weight_load(mesh, goal.weight)
        return float(q @ g.mean)
    if goal.kind == "second_moment":
        q = U @ fem.weight_load(mesh, goal.weight)
        return float(goal.scale * q @ g.gram @ q)
    H = U @ (fem.convection_matrix(mesh, goal.weight) @ U.T)
    return float(np.sum(H * g.gram))


def f_of_dual(rhs, g, dual):
    """F(z_SC) = sum_y F(z_y) int L_y."""
    f = fem.assemble_load(dual.mesh, rhs)
    return float((dual.on_grid(g).values @ f) @ g.mean)


def bform_affine(coeff, g, primal, dual):
    """B(u_SC, z_SC) through the affine expansion of the coefficient."""
    if not coeff.is_affine:
        raise ValueError("exact path requires an affine coefficient")
    mesh = primal.mesh
    U, Z = primal.on_grid(g).values, dual.on_grid(g).values
    total = 0.0
    for m, A in enumerate(fem.mode_matrices(mesh, coeff)):
        total += np.sum((U @ (A @ Z.T)) * g.weighted_gram(m))
    return float(total)


def bform_quadrature(coeff, g, g_hat, primal, dual, stiffness=None):
    """B(u_SC, z_SC) by the sparse quadrature rule of the enriched grid.

    ``stiffness`` optionally maps a key of ``g_hat`` to the assembled
    samplewise matrix (saves reassembly in the driver).
    """
    if set(g_hat.keys) == set(g.keys):
        raise ValueError("enriched grid must strictly contain the base grid")
    mesh = primal.mesh
    U, Z = primal.on_grid(g).values, dual.on_grid(g).values
    new = [k for k in g_hat.keys if k not in g.position]
    L = g.basis_at_keys(new)
    rows = {k: i for i, k in enumerate(new)}
    w = g_hat.mean
    total = 0.0
    for i, key in enumerate(g_hat.keys):
        A = stiffness(key) if stiffness else fem.assemble_stiffness(mesh, coeff, g_hat.coords[i])
        if key in g.position:
            j = g.position[key]
            u, z = U[j], Z[j]
        else:
            u, z = L[rows[key]] @ U, L[rows[key]] @ Z
        total += w[i] * float(u @ (A @ z))
    return float(total)


@dataclass
class QoiRecord:
    Q: float
    F: float
    B: float
    Q_tilde: float
    path: str

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict())


def corrected_qoi(goal, rhs, coeff, g, primal, dual, g_hat=None, stiffness=None):
    """Q_tilde = Q(u_SC) + F(z_SC) - B(u_SC, z_SC)."""
    Q = qoi_on_interpolant(goal, g, primal)
    F = f_of_dual(rhs, g, dual)
    if coeff.is_affine:
        B, path = bform_affine(coeff, g, primal, dual), "affine_exact"
    else:
        if g_hat is None:
            from .sparse_grid import CollocationGrid
            g_hat = CollocationGrid(g.index_set.union(reduced_margin(g.index_set)), g.family)
        B, path = bform_quadrature(coeff, g, g_hat, primal, dual, stiffness), "quadrature"
    return QoiRecord(Q, F, B, Q + F - B, path)
