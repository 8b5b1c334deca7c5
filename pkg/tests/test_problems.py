from __future__ import annotations

import json

import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss

from goalscfem import fem
from goalscfem.config import ConfigError
from goalscfem.mesh import write_mesh
from goalscfem.problems import (AMPLITUDE, ProblemDefinition, fourier_coefficient, fourier_mode,
                                load_mesh, load_problem, reference_solve, setup)
from goalscfem.adaptive import run
from goalscfem.config import RunConfig


def test_fourier_mode_examples():
    assert fourier_mode(1) == (pytest.approx(0.547), 0, 1)
    assert fourier_mode(2) == (pytest.approx(0.547 / 4), 1, 0)
    assert fourier_mode(3) == (pytest.approx(0.547 / 9), 0, 2)
    assert fourier_mode(4)[1:] == (1, 1)
    assert fourier_mode(5)[1:] == (2, 0)
    with pytest.raises(ValueError):
        fourier_mode(0)


def test_modes_enumerate_each_frequency_once():
    pairs = [fourier_mode(m)[1:] for m in range(1, 56)]
    assert len(set(pairs)) == len(pairs)
    # diagonal k = b1 + b2 is nondecreasing
    diag = [b1 + b2 for b1, b2 in pairs]
    assert diag == sorted(diag)


def test_modes_orthogonal_on_unit_square():
    # cos(2 pi b x) are orthogonal on [0, 1]; check with tensor Gauss quadrature
    x, w = leggauss(30)
    x, w = (x + 1) / 2, w / 2
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w).ravel()
    pts = np.column_stack([X1.ravel(), X2.ravel()])
    c = fourier_coefficient(6)
    vals = []
    for m in range(1, 7):
        e = np.zeros(7)
        e[m] = 1.0
        single = fem.CoefficientField(c.amp * e, c.b1, c.b2)
        vals.append(single.h(pts, np.ones(6)) / c.amp[m])
    G = np.array([[np.sum(W * a * b) for b in vals] for a in vals])
    assert np.allclose(G - np.diag(np.diag(G)), 0.0, atol=1e-13)
    assert np.all(np.diag(G) > 0.2)


def test_setup_contents():
    p1, p2, p3, p4 = (setup(i) for i in (1, 2, 3, 4))
    assert [p.M for p in (p1, p2, p3, p4)] == [4, 4, 4, 10]
    assert p1.coeff.is_affine and p3.coeff.is_affine
    assert not p2.coeff.is_affine and not p4.coeff.is_affine
    assert [p.goal.kind for p in (p1, p2, p3, p4)] == ["linear_weight", "linear_weight",
                                                       "second_moment", "convection"]
    assert p3.goal.scale == 100.0
    assert np.isclose(p1.mesh.areas.sum(), 3.0)
    assert np.isclose(p3.mesh.areas.sum(), 1.0)
    assert p2.mesh.areas.sum() < 4.0
    with pytest.raises(ValueError):
        setup(5)


def test_coefficient_bounds():
    lo, hi = setup(1).coeff.bounds()
    hbar = AMPLITUDE * (1 + 1 / 4 + 1 / 9 + 1 / 16)
    assert np.isclose(lo, 1 - hbar) and np.isclose(hi, 1 + hbar)
    assert round(lo, 4) == 0.2213 and round(hi, 4) == 1.7787
    lo4, hi4 = setup(4).coeff.bounds()
    hbar4 = AMPLITUDE * sum(1 / m ** 2 for m in range(1, 11))
    assert np.isclose(lo4, np.exp(1 - hbar4)) and np.isclose(hi4, np.exp(1 + hbar4))
    # sampled values lie inside the enclosure
    rng = np.random.default_rng(0)
    for p in (setup(1), setup(4)):
        x = rng.uniform(-1, 1, (500, 2))
        a_lo, a_hi = p.coeff.bounds()
        for _ in range(20):
            a = p.coeff(x, rng.uniform(-1, 1, p.M))
            assert np.all(a >= a_lo - 1e-12) and np.all(a <= a_hi + 1e-12)


@pytest.mark.parametrize("sid", [1, 3, 4])
def test_goal_subdomains_resolved(sid):
    p = setup(sid)
    mask = p.goal.weight.element_mask(p.mesh)
    assert set(np.unique(mask)) <= {0.0, 1.0}
    assert np.isclose(np.sum(mask * p.mesh.areas), p.goal.weight.measure)


def test_rhs_subdomain_resolved():
    p = setup(3)
    F = fem.assemble_load(p.mesh, p.rhs)
    assert np.all(np.isfinite(F))


def test_reference_finer_than_run():
    p = setup(1)
    q = ProblemDefinition("det", p.mesh, p.coeff.deterministic(), p.rhs, p.goal, p.family,
                          p.mesh_file)
    st = run(q, RunConfig(tol=1e-12, max_iter=2))
    ref = reference_solve(q, st.mesh, st.index_set)
    assert ref.n_dofs > st.history[-1]["dofs"]
    assert ref.path == "affine_exact"
    # linear goal, deterministic coefficient: the correction vanishes up to solver accuracy
    assert abs(ref.correction) <= 1e-10 * abs(ref.Q)
    assert abs(ref.Q_ref - st.history[-1]["Q_corrected"]) < 0.05 * abs(ref.Q_ref)
    with pytest.raises(MemoryError):
        reference_solve(q, st.mesh, st.index_set, max_dofs=10)


def test_reference_dict_roundtrip():
    p = setup(1)
    st = run(p, RunConfig(tol=1e-12, max_iter=1))
    ref = reference_solve(p, st.mesh, st.index_set, n_refinements=1)
    d = ref.to_dict()
    assert d["Q_ref"] == ref.Q_ref and d["n_points"] == ref.n_points
    assert json.loads(json.dumps(d)) == d


def test_load_problem(tmp_path):
    write_mesh(load_mesh("square"), tmp_path / "sq.msh")
    f = tmp_path / "custom.txt"
    f.write_text("mesh = sq.msh\nM = 2\ngoal = linear_weight\nweight = box\n"
                 "weight_data = 0.25 0.75 0.25 0.75\n")
    p = load_problem(f)
    assert p.M == 2 and p.goal.weight.kind == "box" and p.mesh.n_vertices == 25
    f.write_text("mesh = sq.msh\nmodes = 1 0 0; 0.3 1 0\nrhs = div_field\n"
                 "rhs_triangle = 0 0 0.5 0 0 0.5\ngoal = second_moment\nweight = triangle\n"
                 "weight_data = 0.5 1 1 0.5 1 1\nscale = 10\n")
    p = load_problem(f)
    assert p.M == 1 and p.goal.scale == 10.0 and p.rhs.kind == "div_field"
    f.write_text("mesh = sq.msh\nweight = box\n")
    with pytest.raises(ConfigError):
        load_problem(f)
    f.write_text("mesh = sq.msh\nweight = triangle\nweight_data = 1 2 3\n")
    with pytest.raises(ConfigError):
        load_problem(f)
