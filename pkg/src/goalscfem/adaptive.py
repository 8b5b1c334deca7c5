"""Goal-oriented adaptive SC-FEM driver."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import fem
from .estimators import (EstimatorReport, SamplewiseSolutionSet, bochner_estimates,
                         parametric_indicators, spatial_indicators)
from .goal import corrected_qoi, dual_load, fine_dual_load, fine_dual_load_interior
from .mesh import detail_nodes, nvb_refine
from .sparse_grid import CollocationGrid, MultiIndexSet, reduced_margin

log = logging.getLogger(__name__)

HISTORY_FIELDS = ["iter", "dofs", "n_points", "n_vertices", "refine_type", "mu_bar", "tau_bar",
                  "eta_bar", "sigma_bar", "mu", "tau", "eta", "sigma", "Q_uncorrected",
                  "Q_corrected", "estimate"]
STAGNATION_FLOOR = 1e-14


class StagnationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# marking
# ---------------------------------------------------------------------------

def choose_refinement_type(mu_bar, tau_bar, eta_bar, sigma_bar):
    return "spatial" if mu_bar ** 2 + eta_bar ** 2 >= tau_bar ** 2 + sigma_bar ** 2 else "parametric"


def doerfler_min(items, theta):
    """Minimal-cardinality Doerfler set.

    ``items`` is a sequence of (id, weight).  Returns ``(ids, ok)``; ``ok`` is
    False when all weights vanish (the set is then empty).
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    items = list(items)
    if not items:
        return set(), False
    ids = np.array([i for i, _ in items])
    w = np.array([float(v) for _, v in items])
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    order = np.lexsort((ids, -w))
    csum = np.cumsum(w[order])
    total = csum[-1]
    if total <= 0.0:
        return set(), False
    k = int(np.searchsorted(csum, theta * total, side="left"))
    return set(ids[order[:k + 1]].tolist()), True


@dataclass
class MarkingOutcome:
    kind: str
    nodes: list = field(default_factory=list)      # marked edge ids of the mesh
    indices: list = field(default_factory=list)    # marked multi-indices
    family: str = ""                                # which candidate set won

    def to_dict(self):
        return {"kind": self.kind, "nodes": [int(v) for v in self.nodes],
                "indices": [list(nu) for nu in self.indices], "family": self.family}


def _spatial_sets(weights, theta):
    """Doerfler over all (point, node) pairs; returns the union over points
    of marked node positions."""
    n_nodes = weights.shape[1]
    items = enumerate(weights.ravel())
    marked, ok = doerfler_min(items, theta)
    return {i % n_nodes for i in marked}, ok


def _param_set(rm, values, theta):
    ids = {nu: i for i, nu in enumerate(rm)}
    marked, ok = doerfler_min(((ids[nu], values[nu]) for nu in rm), theta)
    return {rm[i] for i in marked}, ok


def _mark(report, theta_x, theta_y, second):
    kind = choose_refinement_type(report.mu_bar, report.tau_bar, report.eta_bar, report.sigma_bar)
    if kind == "spatial":
        L = report.l2_norms[:, None]
        first, ok1 = _spatial_sets(report.mu * L, theta_x)
        other, ok2 = _spatial_sets(second(report.mu, report.eta) * L, theta_x)
        pick_first = (ok1 and len(first) <= len(other)) or not ok2
        chosen = first if pick_first else other
        nodes = sorted(int(report.detail_edges[i]) for i in chosen)
        return MarkingOutcome("spatial", nodes=nodes, family="primal" if pick_first else "second")
    rm = sorted(report.tau)
    first, ok1 = _param_set(rm, report.tau, theta_y)
    comb = {nu: second(report.tau[nu], report.sigma[nu]) for nu in rm}
    other, ok2 = _param_set(rm, comb, theta_y)
    pick_first = (ok1 and len(first) <= len(other)) or not ok2
    chosen = first if pick_first else other
    return MarkingOutcome("parametric", indices=sorted(chosen),
                          family="primal" if pick_first else "second")


def mark_linear(report, theta_x, theta_y):
    """Primal family versus dual family, smaller union wins (ties: primal)."""
    return _mark(report, theta_x, theta_y, lambda mu, eta: eta)


def mark_nonlinear(report, theta_x, theta_y):
    """Primal family versus summed primal+dual family."""
    return _mark(report, theta_x, theta_y, lambda mu, eta: mu + eta)


# ---------------------------------------------------------------------------
# sample solves
# ---------------------------------------------------------------------------

def _map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _solver(A, method):
    return fem.make_solver(A, method).solve


def solve_samples(problem, mesh, coords, workers=1, method="auto"):
    """Primal and dual Galerkin solutions at the given parameter points."""
    F = fem.assemble_load(mesh, problem.rhs)

    coords = np.asarray(coords, dtype=float).reshape(-1, problem.M)
    U = np.empty((len(coords), mesh.n_dofs))
    Z = np.empty_like(U)

    def one(i):
        s = _solver(fem.assemble_stiffness(mesh, problem.coeff, coords[i]), method)
        U[i] = s(F)
        Z[i] = s(dual_load(problem.goal, mesh, U[i]))

    _map(one, list(range(len(coords))), workers)
    return U, Z


def solve_enhanced(problem, mesh, coords, U, workers=1, method="auto"):
    """Solutions on ``uniform_refine(mesh)``; nonlinear dual loads are
    linearised at the coarse primal samples ``U``."""
    tl = fem.two_level(mesh)
    fine = tl.fine
    F = fem.assemble_load(fine, problem.rhs)
    coords = list(np.asarray(coords, dtype=float).reshape(-1, problem.M))

    def one(i):
        s = _solver(fem.assemble_stiffness(fine, problem.coeff, coords[i]), method)
        return s(F), s(fine_dual_load_interior(problem.goal, mesh, U[i]))

    res = _map(one, list(range(len(coords))), workers)
    n = fine.n_dofs
    return np.array([r[0] for r in res]).reshape(-1, n), np.array([r[1] for r in res]).reshape(-1, n)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

@dataclass
class AdaptiveState:
    iteration: int
    mesh: object
    index_set: MultiIndexSet
    history: list = field(default_factory=list)
    report: EstimatorReport | None = None
    qoi: object = None
    marking: MarkingOutcome | None = None
    converged: bool = False
    stopped: bool = False
    reason: str = ""
    qoi_log: list = field(default_factory=list)
    marks: list = field(default_factory=list)
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def dofs(self):
        return self.mesh.n_dofs * len(CollocationGrid(self.index_set))


def initial_state(problem):
    return AdaptiveState(0, problem.mesh, MultiIndexSet.initial(problem.M))


def step(state, problem, config):
    """One pass of solve, estimate, (checkpoint), mark, refine."""
    mesh, I, ell = state.mesh, state.index_set, state.iteration
    fam = problem.family
    g = CollocationGrid(I, fam)
    rm = reduced_margin(I)
    g_hat = CollocationGrid(I.union(rm), fam)

    # (i) samples on Y_hat, reusing those computed on the same mesh
    cache = state.cache if state.cache.get("mesh") is mesh else {"mesh": mesh}
    todo = [k for k in g_hat.keys if k not in cache]
    if todo:
        U, Z = solve_samples(problem, mesh, g_hat.coords_of(todo), config.workers, config.solver)
        for k, u, z in zip(todo, U, Z):
            cache[k] = (u, z)
    U_hat = np.array([cache[k][0] for k in g_hat.keys])
    Z_hat = np.array([cache[k][1] for k in g_hat.keys])
    primal = SamplewiseSolutionSet(mesh, g_hat.keys, U_hat)
    dual = SamplewiseSolutionSet(mesh, g_hat.keys, Z_hat)
    UY, ZY = primal.on_grid(g).values, dual.on_grid(g).values

    # (ii) spatial indicators
    tl = fem.two_level(mesh)
    F_fine = fem.assemble_load(tl.fine, problem.rhs, interior=False)
    if problem.goal.is_linear:
        G_fine = fine_dual_load(problem.goal, mesh)
    else:
        G_fine = [fine_dual_load(problem.goal, mesh, u) for u in UY]
    mu, _ = spatial_indicators(mesh, problem.coeff, g.coords, UY, F_fine)
    eta, _ = spatial_indicators(mesh, problem.coeff, g.coords, ZY, G_fine)

    # (iii) parametric indicators
    tau = parametric_indicators(mesh, g, g_hat, primal)
    sigma = parametric_indicators(mesh, g, g_hat, dual)
    report = EstimatorReport.build(ell, g, detail_nodes(mesh).edge_ids, mu, eta, tau, sigma)

    dofs = mesh.n_dofs * len(g)
    last = dofs >= config.max_dofs or ell >= config.max_iter
    checkpoint = ell % config.estimate_period == 0 or last
    qoi = None
    if config.record_q_every_iteration or checkpoint:
        qoi = corrected_qoi(problem.goal, problem.rhs, problem.coeff, g, primal, dual, g_hat)

    row = {"iter": ell, "dofs": dofs, "n_points": len(g), "n_vertices": mesh.n_vertices,
           "mu_bar": report.mu_bar, "tau_bar": report.tau_bar, "eta_bar": report.eta_bar,
           "sigma_bar": report.sigma_bar,
           "Q_uncorrected": qoi.Q if qoi else None, "Q_corrected": qoi.Q_tilde if qoi else None}
    stop = False
    if checkpoint:
        Uf, Zf = solve_enhanced(problem, mesh, g.coords, UY, config.workers, config.solver)
        m_, t_ = bochner_estimates(mesh, g, g_hat, primal, Uf)
        e_, s_ = bochner_estimates(mesh, g, g_hat, dual, Zf)
        est = (m_ + t_) * (e_ + s_) if problem.goal.is_linear else (m_ + t_) * (m_ + t_ + e_ + s_)
        report.bochner = {"mu": m_, "tau": t_, "eta": e_, "sigma": s_, "estimate": est}
        row.update(mu=m_, tau=t_, eta=e_, sigma=s_, estimate=est)
        stop = est < config.tol
        if not stop and max(report.mu_bar, report.tau_bar,
                            report.eta_bar, report.sigma_bar) < STAGNATION_FLOOR:
            raise StagnationError(f"iteration {ell}: indicators below {STAGNATION_FLOOR:g} "
                                  f"while the estimate {est:.3e} exceeds tol")

    new = replace(state, report=report, qoi=qoi, cache=cache,
                  history=state.history + [row],
                  qoi_log=state.qoi_log + ([{"iter": ell, **qoi.to_dict()}] if qoi else []))
    if stop or last:
        row["refine_type"] = "none"
        new.stopped, new.converged = True, stop
        new.reason = "converged" if stop else ("dof cap" if dofs >= config.max_dofs else "iteration cap")
        new.marking = MarkingOutcome("none")
        return new

    # (iv)-(vi) marking and refinement
    marker = mark_linear if problem.goal.is_linear else mark_nonlinear
    outcome = marker(report, config.theta_x, config.theta_y)
    row["refine_type"] = outcome.kind
    if not outcome.nodes and not outcome.indices:
        raise StagnationError(f"iteration {ell}: nothing marked while estimates exceed tol")
    new.marking = outcome
    new.marks = state.marks + [{"iter": ell, **outcome.to_dict()}]
    new.iteration = ell + 1
    if outcome.kind == "spatial":
        new.mesh = nvb_refine(mesh, outcome.nodes)
        new.cache = {"mesh": new.mesh}
    else:
        new.index_set = I.union(outcome.indices)
        if not new.index_set.is_downward_closed():  # pragma: no cover - guarded by the reduced margin
            raise RuntimeError("index set lost monotonicity")
    log.info("iter %d dofs %d points %d %s est %s", ell, dofs, len(g), outcome.kind,
             row.get("estimate"))
    return new


def run(problem, config, callback=None):
    """Iterate :func:`step` until the stopping test passes or a cap is hit."""
    config.validate()
    state = initial_state(problem)
    while True:
        state = step(state, problem, config)
        if callback:
            callback(state)
        if state.stopped:
            return state


# ---------------------------------------------------------------------------
# history output
# ---------------------------------------------------------------------------

def format_value(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def history_csv(rows):
    lines = [",".join(HISTORY_FIELDS)]
    for r in rows:
        lines.append(",".join(format_value(r.get(k)) for k in HISTORY_FIELDS))
    return "\n".join(lines) + "\n"


def checkpoints(rows):
    return [r for r in rows if r.get("estimate") is not None]


def loglog_slope(x, y):
    x, y = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])

