"""Quick invariant suite behind ``goalscfem verify``."""
from __future__ import annotations

import itertools
import math

import numpy as np

from . import fem
from .adaptive import doerfler_min, run
from .config import RunConfig
from .mesh import detail_nodes, nvb_refine, uniform_refine
from .problems import setup
from .sparse_grid import (CollocationGrid, MultiIndexSet, NodeFamily, margin, one_d_nodes,
                          reduced_margin)


def _mesh_conformity():
    m = setup(1).mesh
    rng = np.random.default_rng(0)
    for _ in range(5):
        ids = detail_nodes(m).edge_ids
        m = nvb_refine(m, rng.choice(ids, size=max(1, len(ids) // 8), replace=False))
        if not m.is_conforming() or np.any(m.areas <= 0):
            return False
    return uniform_refine(m).is_conforming()


def _quadrature_exactness():
    for order, (bary, w) in fem.RULES.items():
        for a, b in itertools.product(range(order + 1), repeat=2):
            if a + b > order:
                continue
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            val = 0.5 * np.sum(w * bary[:, 1] ** a * bary[:, 2] ** b)
            if abs(val - exact) > 1e-13:
                return False
    return True


def _grid_invariants():
    I = MultiIndexSet([(1, 1), (2, 1), (1, 2), (3, 1), (2, 2)])
    g = CollocationGrid(I)
    ok = np.array_equal(g.basis_at_keys(g.keys), np.eye(len(g)))
    ok &= abs(g.mean.sum() - 1.0) < 1e-13
    ok &= abs(sum(g.coefficients.values()) - 1) == 0
    ok &= set(reduced_margin(I)) <= set(margin(I))
    fam = NodeFamily()
    for lev in range(1, 6):
        ok &= set(one_d_nodes(fam, lev).tolist()) <= set(one_d_nodes(fam, lev + 1).tolist())
    return bool(ok)


def _galerkin_orthogonality():
    p = setup(1)
    m = p.mesh
    A = fem.assemble_stiffness(m, p.coeff, np.full(p.M, 0.3))
    F = fem.assemble_load(m, p.rhs)
    u = fem.solve(A, F)
    return bool(np.max(np.abs(F - A @ u)) <= 1e-9 * np.linalg.norm(F))


def _doerfler():
    rng = np.random.default_rng(1)
    for _ in range(20):
        w = rng.random(7)
        theta = rng.uniform(0.1, 1.0)
        S, _ = doerfler_min(enumerate(w), theta)
        best = min(len(c) for r in range(1, 8) for c in itertools.combinations(range(7), r)
                   if w[list(c)].sum() >= theta * w.sum())
        if len(S) != best or w[list(S)].sum() < theta * w.sum():
            return False
    return True


def _short_run():
    st = run(setup(1), RunConfig(setup=1, tol=1e-3, max_dofs=3000))
    ok = True
    for q in st.qoi_log:
        ok &= abs(q["Q"] - q["F"]) <= 1e-10 * (1 + abs(q["Q"]))
    for r in st.history:
        if r.get("tau") is not None:
            ok &= r["tau"] <= r["tau_bar"] * (1 + 1e-10)
    return bool(ok)


CHECKS = [
    ("mesh conformity under NVB", _mesh_conformity),
    ("triangle quadrature exactness", _quadrature_exactness),
    ("sparse grid invariants", _grid_invariants),
    ("Galerkin orthogonality", _galerkin_orthogonality),
    ("Doerfler minimal cardinality", _doerfler),
    ("short run: linear identity and tau <= tau_bar", _short_run),
]


def run_all(out=print):
    ok_all = True
    for name, fn in CHECKS:
        try:
            ok = fn()
        except Exception as exc:  # report, keep going
            ok = False
            name = f"{name} ({type(exc).__name__}: {exc})"
        ok_all &= ok
        out(f"{'PASS' if ok else 'FAIL'}  {name}")
    return ok_all
