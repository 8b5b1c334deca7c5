from __future__ import annotations

import itertools

import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss

from goalscfem import fem
from goalscfem.adaptive import solve_samples
from goalscfem.estimators import SamplewiseSolutionSet
from goalscfem.goal import (GoalDescriptor, QoiRecord, bform_affine, bform_quadrature, corrected_qoi,
                            dual_load, f_of_dual, fine_dual_load, qoi_on_interpolant)
from goalscfem.mesh import uniform_refine
from goalscfem.problems import ProblemDefinition, fourier_coefficient, setup
from goalscfem.sparse_grid import MultiIndexSet, grid, reduced_margin


def enhanced(g):
    return grid(g.index_set.union(reduced_margin(g.index_set)), g.family)


def sets_on(problem, mesh, g):
    U, Z = solve_samples(problem, mesh, g.coords)
    return SamplewiseSolutionSet(mesh, g.keys, U), SamplewiseSolutionSet(mesh, g.keys, Z)


def small_grid(M):
    return grid(MultiIndexSet([(1,) * M, (2,) + (1,) * (M - 1), (1, 2) + (1,) * (M - 2)]))


# ---------------------------------------------------------------- dual loads

@pytest.mark.parametrize("sid", [3, 4])
def test_gateaux_central_differences(sid):
    p = setup(sid)
    m = uniform_refine(p.mesh)
    rng = np.random.default_rng(sid)
    h = 1e-5
    for _ in range(50):
        u, v = rng.standard_normal((2, m.n_dofs))
        fd = (p.goal.sample(m, u + h * v) - p.goal.sample(m, u - h * v)) / (2 * h)
        exact = dual_load(p.goal, m, u) @ v
        assert abs(fd - exact) <= 1e-6 * max(abs(exact), 1e-300)


@pytest.mark.parametrize("sid", [3, 4])
def test_fine_dual_load_consistent(sid):
    p = setup(sid)
    m = p.mesh
    u = np.random.default_rng(1).standard_normal(m.n_dofs)
    tl = fem.two_level(m)
    fine = tl.fine
    uf = tl.prolongation() @ u
    full = fine_dual_load(p.goal, m, u)
    assert np.allclose(full[fine.interior_vertices], dual_load(p.goal, fine, uf), rtol=1e-12, atol=1e-15)


def test_dual_load_examples():
    p1 = setup(1)
    m = uniform_refine(uniform_refine(p1.mesh))
    load = dual_load(p1.goal, m)
    mask = p1.goal.weight.element_mask(m)
    inside = np.unique(m.triangles[mask > 0])
    far = np.setdiff1d(np.arange(m.n_vertices), inside)
    assert np.all(fem.to_full(m, load)[far] == 0.0)
    p3 = setup(3)
    assert np.all(dual_load(p3.goal, m, np.zeros(m.n_dofs)) == 0.0)
    with pytest.raises(ValueError):
        dual_load(p3.goal, m)
    with pytest.raises(ValueError):
        GoalDescriptor("second_moment", p3.goal.weight, scale=0.0)


def test_second_moment_lipschitz_envelope():
    p = setup(3)
    m = uniform_refine(p.mesh)
    rng = np.random.default_rng(3)
    K = fem.laplacian(m)
    nrm = lambda x: np.sqrt(x @ (K @ x))  # noqa: E731

    def ratio():
        v, w, z = rng.standard_normal((3, m.n_dofs))
        d = dual_load(p.goal, m, v) - dual_load(p.goal, m, w)
        return abs(d @ z) / (nrm(v - w) * nrm(z))

    C = max(ratio() for _ in range(200))
    assert all(ratio() <= 1.5 * C for _ in range(200))
    # analytic bound 2 s l^T K^{-1} l with l the weight load
    l = fem.weight_load(m, p.goal.weight)
    bound = 2 * p.goal.scale * l @ fem.solve(K, l)
    assert C <= bound * (1 + 1e-12)


# ---------------------------------------------------------------- QoI pieces

@pytest.mark.parametrize("sid", [1, 2])
def test_linear_goal_identity(sid):
    p = setup(sid)
    g = small_grid(p.M)
    U, Z = sets_on(p, p.mesh, g)
    Q, F = qoi_on_interpolant(p.goal, g, U), f_of_dual(p.rhs, g, Z)
    assert abs(Q - F) <= 1e-10 * (1 + abs(Q))


def test_qoi_collapse_cases():
    p = setup(3)
    m = p.mesh
    g = small_grid(p.M)
    u = np.random.default_rng(0).standard_normal(m.n_dofs)
    same = SamplewiseSolutionSet(m, g.keys, np.tile(u, (len(g), 1)))
    assert np.isclose(qoi_on_interpolant(p.goal, g, same), p.goal.sample(m, u), rtol=1e-12)
    zero = SamplewiseSolutionSet(m, g.keys, np.zeros((len(g), m.n_dofs)))
    assert qoi_on_interpolant(p.goal, g, zero) == 0.0
    assert f_of_dual(p.rhs, g, zero) == 0.0
    # int q u_y = c for all y gives scale c^2
    l = fem.weight_load(m, p.goal.weight)
    V = np.random.default_rng(1).standard_normal((len(g), m.n_dofs))
    V -= np.outer((V @ l - 0.3) / (l @ l), l)
    assert np.isclose(qoi_on_interpolant(p.goal, g, SamplewiseSolutionSet(m, g.keys, V)),
                      p.goal.scale * 0.09, rtol=1e-12)
    p4 = setup(4)
    g4 = small_grid(p4.M)
    u4 = np.random.default_rng(2).standard_normal(p4.mesh.n_dofs)
    same4 = SamplewiseSolutionSet(p4.mesh, g4.keys, np.tile(u4, (len(g4), 1)))
    assert np.isclose(qoi_on_interpolant(p4.goal, g4, same4), p4.goal.sample(p4.mesh, u4), rtol=1e-12)


def test_single_point_f_of_dual():
    p = setup(1)
    g = grid(MultiIndexSet.initial(p.M))
    z = np.random.default_rng(0).standard_normal(p.mesh.n_dofs)
    Z = SamplewiseSolutionSet(p.mesh, g.keys, z[None])
    assert np.isclose(f_of_dual(p.rhs, g, Z), fem.assemble_load(p.mesh, p.rhs) @ z, rtol=1e-14)


# ---------------------------------------------------------------- bilinear form

def test_bform_affine_deterministic_and_coercive():
    p = setup(1)
    m = p.mesh
    g = small_grid(p.M)
    rng = np.random.default_rng(0)
    U = SamplewiseSolutionSet(m, g.keys, rng.standard_normal((len(g), m.n_dofs)))
    det = p.coeff.deterministic()
    u = U.values[0]
    one = SamplewiseSolutionSet(m, g.keys, np.tile(u, (len(g), 1)))
    A0 = fem.assemble_stiffness(m, det, np.zeros(p.M))
    assert np.isclose(bform_affine(det, g, one, one), u @ A0 @ u, rtol=1e-12)
    # coercivity: B(u_SC, u_SC) >= a_min ||u_SC||^2
    a_min = p.coeff.bounds()[0]
    lhs = bform_affine(p.coeff, g, U, U)
    H = U.values @ (fem.laplacian(m) @ U.values.T)
    assert lhs >= a_min * np.sum(H * g.gram) > 0


def test_bform_affine_rejects_exponential():
    p = setup(2)
    g = small_grid(p.M)
    S = SamplewiseSolutionSet(p.mesh, g.keys, np.zeros((len(g), p.mesh.n_dofs)))
    with pytest.raises(ValueError):
        bform_affine(p.coeff, g, S, S)
    with pytest.raises(ValueError):
        bform_quadrature(p.coeff, g, g, S, S)


@pytest.mark.parametrize("I", [[(1, 1, 1, 1)], [(1, 1, 1, 1), (2, 1, 1, 1), (1, 2, 1, 1)]])
def test_bform_affine_equals_quadrature(I):
    p = setup(1)
    g = grid(MultiIndexSet(I))
    U, Z = sets_on(p, p.mesh, g)
    a = bform_affine(p.coeff, g, U, Z)
    b = bform_quadrature(p.coeff, g, enhanced(g), U, Z)
    assert abs(a - b) <= 1e-8 * abs(a)


def two_mode_problem(transform):
    p = setup(1)
    return ProblemDefinition("m2", p.mesh, fourier_coefficient(2, transform), p.rhs, p.goal,
                             p.family, p.mesh_file)


@pytest.mark.parametrize("transform", ["affine", "exponential"])
def test_bform_quadrature_against_tensor_gauss(transform):
    p = two_mode_problem(transform)
    m = p.mesh
    g = grid(MultiIndexSet([(1, 1), (2, 1), (1, 2)]))
    U, Z = sets_on(p, m, g)
    val = bform_quadrature(p.coeff, g, enhanced(g), U, Z)
    x, w = leggauss(12)
    ref = 0.0
    for (y1, w1), (y2, w2) in itertools.product(zip(x, w / 2), repeat=2):
        L = g.basis([[y1, y2]])[0]
        A = fem.assemble_stiffness(m, p.coeff, [y1, y2])
        ref += w1 * w2 * (L @ U.values) @ (A @ (L @ Z.values))
    assert abs(val - ref) <= 1e-6 * abs(ref)


def test_bform_quadrature_collapse_on_grid_points():
    p = setup(1)
    g = small_grid(p.M)
    U, Z = sets_on(p, p.mesh, g)
    L = g.basis(g.coords)
    for i in range(len(g)):
        A = fem.assemble_stiffness(p.mesh, p.coeff, g.coords[i])
        naive = (L[i] @ U.values) @ (A @ (L[i] @ Z.values))
        direct = U.values[i] @ (A @ Z.values[i])
        assert abs(naive - direct) <= 1e-12 * abs(direct)


# ---------------------------------------------------------------- corrected goal

@pytest.mark.parametrize("sid", [1, 2, 3, 4])
def test_deterministic_collapse(sid):
    p = setup(sid)
    det = p.coeff.deterministic()
    q = ProblemDefinition("det", p.mesh, det, p.rhs, p.goal, p.family, p.mesh_file)
    m = uniform_refine(p.mesh)
    g = grid(MultiIndexSet.initial(p.M))
    U, Z = sets_on(q, m, g)
    rec = corrected_qoi(p.goal, p.rhs, det, g, U, Z)
    assert abs(rec.Q_tilde - p.goal.sample(m, U.values[0])) <= 1e-10 * (1 + abs(rec.Q))
    assert rec.path == ("affine_exact" if det.is_affine else "quadrature")


def test_record_identity_and_paths():
    p = setup(2)
    g = small_grid(p.M)
    U, Z = sets_on(p, p.mesh, g)
    rec = corrected_qoi(p.goal, p.rhs, p.coeff, g, U, Z)
    assert rec.path == "quadrature"
    assert rec.Q_tilde == rec.Q + rec.F - rec.B
    d = QoiRecord(**rec.to_dict())
    assert d == rec
    p1 = setup(1)
    U, Z = sets_on(p1, p1.mesh, small_grid(p1.M))
    rec = corrected_qoi(p1.goal, p1.rhs, p1.coeff, small_grid(p1.M), U, Z)
    assert rec.path == "affine_exact"
    # linear goal: Q_tilde = 2 Q - B since F = Q
    assert abs(rec.Q_tilde - (2 * rec.Q - rec.B)) <= 1e-10 * (1 + abs(rec.Q))
