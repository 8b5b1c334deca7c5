"""Hot loops with a numba implementation and a pure-numpy twin.

Set ``GOALSCFEM_NUMBA=0`` to force the numpy versions.  Both variants are
importable directly (``*_numba`` / ``*_numpy``) for testing and benchmarks;
the unsuffixed names are the ones used by the library.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("GOALSCFEM_NUMBA", "1") not in ("0", "false", "no")

TWO_PI = 2.0 * np.pi
_CHUNK = 1 << 16


# ---------------------------------------------------------------------------
# coefficient integrals  int_K a(x, y) dx  for a(x, y) = T(sum_m c_m h_m(x))
# with h_m = amp_m cos(2 pi b1_m x1) cos(2 pi b2_m x2) and c = (1, y_1 .. y_M)
# ---------------------------------------------------------------------------

def coeff_integrals_numpy(qx, qy, qw, area, amp, b1, b2, yext, exponential):
    """Per-triangle integrals of the coefficient and its minimum at the
    quadrature points.

    ``qx, qy`` are (T, nq) physical quadrature points, ``qw`` (nq,) reference
    weights summing to one and ``area`` (T,) the triangle areas.
    """
    T, nq = qx.shape
    coef = amp * yext
    fx, fy = qx.ravel(), qy.ravel()
    vals = np.empty(T * nq)
    for s in range(0, T * nq, _CHUNK):
        x, y = fx[s:s + _CHUNK], fy[s:s + _CHUNK]
        h = np.zeros(len(x))
        for m in range(len(coef)):
            if coef[m] != 0.0:
                h += coef[m] * np.cos(TWO_PI * b1[m] * x) * np.cos(TWO_PI * b2[m] * y)
        vals[s:s + _CHUNK] = np.exp(h) if exponential else h
    vals = vals.reshape(T, nq)
    return (vals @ qw) * area, float(vals.min()) if vals.size else np.inf


def _coeff_integrals_loop(qx, qy, qw, area, amp, b1, b2, yext, exponential):
    T, nq = qx.shape
    M1 = amp.shape[0]
    out = np.empty(T)
    vmin = np.inf
    for t in range(T):
        acc = 0.0
        for q in range(nq):
            x = qx[t, q]
            y = qy[t, q]
            h = 0.0
            for m in range(M1):
                c = amp[m] * yext[m]
                if c != 0.0:
                    h += c * np.cos(TWO_PI * b1[m] * x) * np.cos(TWO_PI * b2[m] * y)
            if exponential:
                h = np.exp(h)
            if h < vmin:
                vmin = h
            acc += qw[q] * h
        out[t] = acc * area[t]
    return out, vmin


def _coeff_integrals_int_loop(qx, qy, qw, area, amp, k1, k2, yext, exponential):
    # integer frequencies: cos(2 pi k x) by the Chebyshev recurrence, two cosines per point
    T, nq = qx.shape
    M1 = amp.shape[0]
    K = max(k1.max(), k2.max()) + 1
    cx = np.empty(K)
    cy = np.empty(K)
    c = amp * yext
    out = np.empty(T)
    vmin = np.inf
    for t in range(T):
        acc = 0.0
        for q in range(nq):
            cx[0] = 1.0
            cy[0] = 1.0
            if K > 1:
                cx[1] = np.cos(TWO_PI * qx[t, q])
                cy[1] = np.cos(TWO_PI * qy[t, q])
            for k in range(2, K):
                cx[k] = 2.0 * cx[1] * cx[k - 1] - cx[k - 2]
                cy[k] = 2.0 * cy[1] * cy[k - 1] - cy[k - 2]
            h = 0.0
            for m in range(M1):
                if c[m] != 0.0:
                    h += c[m] * cx[k1[m]] * cy[k2[m]]
            if exponential:
                h = np.exp(h)
            if h < vmin:
                vmin = h
            acc += qw[q] * h
        out[t] = acc * area[t]
    return out, vmin


# ---------------------------------------------------------------------------
# two-level residual scatter:  r[node] += a_c * grad(u)|_parent . grad(phi_node)|_c
# over the four children c of every coarse triangle
# ---------------------------------------------------------------------------

def two_level_scatter_numpy(fine_tris, fine_grads, fine_a, parent, coarse_grad_u, n_fine_vertices):
    g = coarse_grad_u[parent]                                   # (Tf, 2)
    contrib = fine_a[:, None] * np.einsum("tkd,td->tk", fine_grads, g)
    return np.bincount(fine_tris.ravel(), weights=contrib.ravel(), minlength=n_fine_vertices)


def _two_level_scatter_loop(fine_tris, fine_grads, fine_a, parent, coarse_grad_u, n_fine_vertices):
    r = np.zeros(n_fine_vertices)
    for c in range(fine_tris.shape[0]):
        p = parent[c]
        gx = coarse_grad_u[p, 0]
        gy = coarse_grad_u[p, 1]
        a = fine_a[c]
        for k in range(3):
            r[fine_tris[c, k]] += a * (gx * fine_grads[c, k, 0] + gy * fine_grads[c, k, 1])
    return r


if numba is not None:
    _coeff_general_numba = numba.njit(cache=True)(_coeff_integrals_loop)
    _coeff_int_numba = numba.njit(cache=True)(_coeff_integrals_int_loop)

    def coeff_integrals_numba(qx, qy, qw, area, amp, b1, b2, yext, exponential):
        amp, b1, b2, yext = (np.asarray(v, dtype=float) for v in (amp, b1, b2, yext))
        k1, k2 = np.abs(b1), np.abs(b2)   # cos is even
        if np.all(k1 == np.round(k1)) and np.all(k2 == np.round(k2)):
            return _coeff_int_numba(qx, qy, qw, area, amp, k1.astype(np.int64),
                                    k2.astype(np.int64), yext, bool(exponential))
        return _coeff_general_numba(qx, qy, qw, area, amp, b1, b2, yext, bool(exponential))
    two_level_scatter_numba = numba.njit(cache=True)(_two_level_scatter_loop)
else:  # pragma: no cover
    coeff_integrals_numba = coeff_integrals_numpy
    two_level_scatter_numba = two_level_scatter_numpy


def coeff_integrals(qx, qy, qw, area, amp, b1, b2, yext, exponential):
    if USE_NUMBA:
        out, vmin = coeff_integrals_numba(qx, qy, qw, area, amp, b1, b2, yext, exponential)
        return out, float(vmin)
    return coeff_integrals_numpy(qx, qy, qw, area, amp, b1, b2, yext, exponential)


def two_level_scatter(fine_tris, fine_grads, fine_a, parent, coarse_grad_u, n_fine_vertices):
    if USE_NUMBA:
        return two_level_scatter_numba(fine_tris, fine_grads, fine_a, parent,
                                       np.ascontiguousarray(coarse_grad_u), int(n_fine_vertices))
    return two_level_scatter_numpy(fine_tris, fine_grads, fine_a, parent, coarse_grad_u,
                                   n_fine_vertices)
