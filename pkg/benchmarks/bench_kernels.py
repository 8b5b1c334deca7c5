"""Timing of the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--refine N] [--repeat R]

Both variants are called directly, so ``GOALSCFEM_NUMBA`` does not matter
here.  Results are checked for agreement before timing.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from goalscfem import _kernels, fem
from goalscfem.mesh import uniform_refine
from goalscfem.problems import setup


def coeff_case(mesh, coeff, y):
    qx, qy, w = fem.quadrature_points(mesh, coeff.quad_order)
    return (qx, qy, w, mesh.areas, coeff.amp, coeff.b1, coeff.b2,
            np.concatenate([[1.0], y]), not coeff.is_affine)


def scatter_case(mesh, coeff, y):
    tl = fem.two_level(mesh)
    fine = tl.fine
    grad_u = np.random.default_rng(1).standard_normal((mesh.n_triangles, 2))
    a = coeff.element_integrals(fine, y) / fine.areas
    return (fine.triangles, fem.gradients(fine), a, tl.parent, np.ascontiguousarray(grad_u),
            fine.n_vertices)


def bench(name, f_numba, f_numpy, args, repeat):
    a, b = f_numba(*args), f_numpy(*args)
    a0, b0 = (a[0], b[0]) if isinstance(a, tuple) else (a, b)
    assert np.allclose(a0, b0, rtol=1e-12, atol=1e-14), name
    t_nb = min(timeit.repeat(lambda: f_numba(*args), number=1, repeat=repeat))
    t_np = min(timeit.repeat(lambda: f_numpy(*args), number=1, repeat=repeat))
    print(f"{name:<28s} numba {1e3 * t_nb:9.2f} ms   numpy {1e3 * t_np:9.2f} ms   "
          f"speedup {t_np / t_nb:6.1f}x")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--refine", type=int, default=4, help="uniform refinements of the setup mesh")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    for sid in (1, 4):
        p = setup(sid)
        mesh = p.mesh
        for _ in range(args.refine):
            mesh = uniform_refine(mesh)
        y = np.random.default_rng(sid).uniform(-1, 1, p.M)
        print(f"setup {sid}: {mesh.n_triangles} triangles, M = {p.M}, {p.coeff.transform}")
        bench("coefficient integrals", _kernels.coeff_integrals_numba,
              _kernels.coeff_integrals_numpy, coeff_case(mesh, p.coeff, y), args.repeat)
        bench("two-level scatter", _kernels.two_level_scatter_numba,
              _kernels.two_level_scatter_numpy, scatter_case(mesh, p.coeff, y), args.repeat)


if __name__ == "__main__":
    main()
