"""A posteriori indicators and estimates for SC-FEM solution sets."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .mesh import MeshError, detail_nodes
from .sparse_grid import new_points, reduced_margin


@dataclass
class SamplewiseSolutionSet:
    """FE solutions (rows of ``values``, interior dofs of ``mesh``) at the
    collocation points given by ``keys``."""

    mesh: object
    keys: list
    values: np.ndarray

    def __post_init__(self):
        self.keys = [tuple(k) for k in self.keys]
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.keys), -1)
        if self.values.shape[1] != self.mesh.n_dofs:
            raise MeshError("solution vectors do not match the mesh")
        self._pos = {k: i for i, k in enumerate(self.keys)}

    def __len__(self):
        return len(self.keys)

    def __getitem__(self, key):
        return self.values[self._pos[tuple(key)]]

    def __contains__(self, key):
        return tuple(key) in self._pos

    def restrict(self, keys):
        """Sub-set in the order of ``keys``; every key must be present."""
        missing = [k for k in keys if tuple(k) not in self._pos]
        if missing:
            raise KeyError(f"no solution at {missing[:3]}")
        return SamplewiseSolutionSet(self.mesh, list(keys),
                                     self.values[[self._pos[tuple(k)] for k in keys]])

    def on_grid(self, g):
        if self.keys == [tuple(k) for k in g.keys]:
            return self  # no copy of the (possibly large) value array
        return self.restrict(g.keys)


def spatial_indicators(mesh, coeff, points, values, fine_loads):
    """Two-level indicators mu_y(xi) = |F(phi_hat) - B_y(u_y, phi_hat)| / ||phi_hat||.

    ``points`` (n, M) parameter coordinates, ``values`` (n, dofs) solutions,
    ``fine_loads`` either a single fine-mesh load vector or a sequence with
    one per point.  Returns the (n, #detail) indicator matrix and the
    per-point aggregates.
    """
    values = np.asarray(values, dtype=float)
    points = np.asarray(points, dtype=float).reshape(len(values), -1)
    if values.shape[1:] != (mesh.n_dofs,):
        raise MeshError("solution vectors do not match the mesh")
    shared = isinstance(fine_loads, np.ndarray) and fine_loads.ndim == 1
    ind = np.empty((len(values), len(detail_nodes(mesh))))
    for i, (y, u) in enumerate(zip(points, values)):
        load = fine_loads if shared else fine_loads[i]
        num, hat = fem.two_level_residual(mesh, coeff, y, u, load)
        ind[i] = num / hat
    return ind, np.sqrt(np.sum(ind ** 2, axis=1))


def interpolated(g, values, keys):
    """Interpolant of the grid values at points given by keys."""
    return g.basis_at_keys(keys) @ values


def parametric_indicators(mesh, g, g_hat, solutions):
    """tau_nu = sum over new points y' of nu of ||u_y' - u_SC(y')|| ||L_hat_y'||.

    ``solutions`` must hold values on every point of ``g_hat``.  Returns a
    dict ordered like ``reduced_margin(g.index_set)``.
    """
    I = g.index_set
    base = solutions.on_grid(g).values
    norms = g_hat.l2_norms
    K = fem.laplacian(mesh)
    out = {}
    for nu in reduced_margin(I):
        keys = new_points(I, nu, g.family)
        if not keys:
            out[nu] = 0.0
            continue
        diff = solutions.restrict(keys).values - interpolated(g, base, keys)
        e = np.sqrt(np.maximum(np.einsum("ij,ij->i", diff @ K, diff), 0.0))
        out[nu] = float(np.sum(e * norms[[g_hat.index(k) for k in keys]]))
    return out


def interpolant_bochner_norm(mesh, W, gram):
    """|| sum_i w_i L_i || in L2_pi(H1_0) for rows w_i on ``mesh`` and the
    parametric gram matrix of the L_i."""
    W = np.asarray(W, dtype=float)
    if W.size == 0:
        return 0.0
    if W.shape[1] != mesh.n_dofs:
        raise MeshError("vectors do not match the mesh")
    H = W @ (fem.laplacian(mesh) @ W.T)
    return float(np.sqrt(max(np.sum(H * np.asarray(gram)), 0.0)))


def spatial_bochner(mesh, g, coarse_values, fine_values):
    """|| sum_y (u_hat_y - u_y) L_y || with u_hat on the uniform refinement."""
    tl = fem.two_level(mesh)
    W = np.asarray(fine_values) - (tl.prolongation() @ np.asarray(coarse_values).T).T
    return interpolant_bochner_norm(tl.fine, W, g.gram)


def parametric_bochner(mesh, g, g_hat, solutions):
    """|| sum_{y' in Y_hat minus Y} (u_y' - u_SC(y')) L_hat_y' ||."""
    keys = [k for k in g_hat.keys if k not in g.position]
    if not keys:
        return 0.0
    base = solutions.on_grid(g).values
    diff = solutions.restrict(keys).values - interpolated(g, base, keys)
    idx = [g_hat.index(k) for k in keys]
    return interpolant_bochner_norm(mesh, diff, g_hat.gram[np.ix_(idx, idx)])


def bochner_estimates(mesh, g, g_hat, solutions, fine_values):
    """(spatial, parametric) Bochner estimates, e.g. (mu, tau) or (eta, sigma)."""
    coarse = solutions.on_grid(g).values
    return spatial_bochner(mesh, g, coarse, fine_values), parametric_bochner(mesh, g, g_hat, solutions)


def cumulative(point_aggregates, l2_norms, param_indicators):
    """(sum_y mu_y ||L_y||, sum_nu tau_nu)."""
    s = float(np.sum(np.asarray(point_aggregates) * np.asarray(l2_norms)))
    return s, float(sum(param_indicators.values()))


@dataclass
class EstimatorReport:
    iteration: int
    keys: list
    l2_norms: np.ndarray
    detail_edges: np.ndarray
    mu: np.ndarray                  # (n_points, n_detail) primal spatial indicators
    eta: np.ndarray                 # dual spatial indicators
    tau: dict                       # nu -> primal parametric indicator
    sigma: dict                     # nu -> dual parametric indicator
    mu_bar: float = 0.0
    tau_bar: float = 0.0
    eta_bar: float = 0.0
    sigma_bar: float = 0.0
    bochner: dict | None = field(default=None)

    @classmethod
    def build(cls, iteration, g, detail_edges, mu, eta, tau, sigma):
        norms = g.l2_norms
        mu_pts = np.sqrt(np.sum(mu ** 2, axis=1))
        eta_pts = np.sqrt(np.sum(eta ** 2, axis=1))
        mu_bar, tau_bar = cumulative(mu_pts, norms, tau)
        eta_bar, sigma_bar = cumulative(eta_pts, norms, sigma)
        return cls(iteration, list(g.keys), norms, np.asarray(detail_edges), mu, eta, tau, sigma,
                   mu_bar, tau_bar, eta_bar, sigma_bar)

    @property
    def mu_points(self):
        return np.sqrt(np.sum(self.mu ** 2, axis=1))

    @property
    def eta_points(self):
        return np.sqrt(np.sum(self.eta ** 2, axis=1))

    def to_dict(self):
        return {
            "iteration": self.iteration,
            "points": [list(k) for k in self.keys],
            "l2_norms": self.l2_norms.tolist(),
            "detail_edges": self.detail_edges.tolist(),
            "mu": self.mu.tolist(),
            "eta": self.eta.tolist(),
            "tau": [[list(k), v] for k, v in self.tau.items()],
            "sigma": [[list(k), v] for k, v in self.sigma.items()],
            "mu_bar": self.mu_bar, "tau_bar": self.tau_bar,
            "eta_bar": self.eta_bar, "sigma_bar": self.sigma_bar,
            "bochner": self.bochner,
        }

    def to_json(self):
        return json.dumps(self.to_dict())
