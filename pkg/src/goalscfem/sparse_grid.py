"""Downward-closed index sets, nested 1D node families and sparse grids.

Multi-indices are tuples of positive ints.  Collocation points are keyed by
tuples of level-independent 1D node indices: index ``j`` of a node family is
the same abscissa at every level that contains it, and level ``i`` consists of
indices ``0 .. m(i)-1``.

Parametric integrals are taken with respect to the uniform probability
measure on [-1, 1]^M.  The vectorised routes go through the expansion of every
Lagrange basis function in orthonormal Legendre polynomials; the scalar
functions :func:`lagrange_mean`, :func:`lagrange_gram` and
:func:`lagrange_weighted_gram` expand both basis functions by the combination
technique and integrate 1D products by Gauss-Legendre quadrature.
"""
from __future__ import annotations

import itertools
import json
from functools import cached_property, lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg


# ---------------------------------------------------------------------------
# index sets
# ---------------------------------------------------------------------------

class MultiIndexSet:
    """Finite set of multi-indices in N^M (components >= 1)."""

    def __init__(self, indices, M=None):
        idx = {tuple(int(v) for v in nu) for nu in indices}
        if M is None:
            if not idx:
                raise ValueError("dimension needed for an empty index set")
            M = len(next(iter(idx)))
        for nu in idx:
            if len(nu) != M or min(nu, default=1) < 1:
                raise ValueError(f"invalid multi-index {nu} for M={M}")
        self.M = M
        self._set = frozenset(idx)

    @classmethod
    def initial(cls, M):
        return cls([(1,) * M], M)

    def __contains__(self, nu):
        return tuple(nu) in self._set

    def __iter__(self):
        return iter(sorted(self._set))

    def __len__(self):
        return len(self._set)

    def __eq__(self, other):
        return isinstance(other, MultiIndexSet) and self.M == other.M and self._set == other._set

    def __hash__(self):
        return hash((self.M, self._set))

    def __repr__(self):
        return f"MultiIndexSet({sorted(self._set)})"

    def union(self, other):
        return MultiIndexSet(self._set | {tuple(nu) for nu in other}, self.M)

    def is_downward_closed(self):
        return all(_dec(nu, m) in self._set
                   for nu in self._set for m in range(self.M) if nu[m] > 1)

    def maximal(self):
        return [nu for nu in self if all(_inc(nu, m) not in self._set for m in range(self.M))]

    def to_json(self):
        return json.dumps([list(nu) for nu in self])

    @classmethod
    def from_json(cls, text, M=None):
        return cls([tuple(v) for v in json.loads(text)], M)


def _inc(nu, m):
    return nu[:m] + (nu[m] + 1,) + nu[m + 1:]


def _dec(nu, m):
    return nu[:m] + (nu[m] - 1,) + nu[m + 1:]


def margin(I):
    """Indices outside I with some backward neighbour in I."""
    out = {_inc(nu, m) for nu in I for m in range(I.M)}
    return sorted(out - set(I))


def reduced_margin(I):
    """Margin indices whose every backward neighbour lies in I."""
    return [nu for nu in margin(I)
            if all(_dec(nu, m) in I for m in range(I.M) if nu[m] > 1)]


def combination_coefficients(I):
    """Nonzero c_nu = sum over e in {0,1}^M with nu+e in I of (-1)^|e|."""
    coeffs = {}
    shifts = list(itertools.product((0, 1), repeat=I.M))
    for nu in I:
        c = 0
        for e in shifts:
            if tuple(a + b for a, b in zip(nu, e)) in I:
                c += -1 if sum(e) % 2 else 1
        if c:
            coeffs[nu] = c
    return coeffs


# ---------------------------------------------------------------------------
# 1D node families
# ---------------------------------------------------------------------------

class NodeFamily:
    """Nested 1D nodes: ``clenshaw_curtis`` (m(i) = 2^(i-1)+1) or ``leja``
    (m(i) = i)."""

    LEJA_SEARCH = 100_001

    def __init__(self, kind="clenshaw_curtis"):
        if kind not in ("clenshaw_curtis", "leja"):
            raise ValueError(f"unknown node family {kind!r}")
        self.kind = kind

    def __eq__(self, other):
        return isinstance(other, NodeFamily) and other.kind == self.kind

    def __hash__(self):
        return hash(self.kind)

    def __repr__(self):
        return f"NodeFamily({self.kind!r})"

    def m(self, level):
        if level <= 0:
            return 0
        if self.kind == "leja":
            return level
        return 1 if level == 1 else 2 ** (level - 1) + 1

    def nodes_by_index(self, n):
        """Abscissae of indices 0 .. n-1."""
        return _cc_nodes(n) if self.kind == "clenshaw_curtis" else _leja_nodes(n, self.LEJA_SEARCH)

    def nodes(self, level):
        return self.nodes_by_index(self.m(level))

    def level_of(self, index):
        """Smallest level containing the node with the given index."""
        level = 1
        while self.m(level) <= index:
            level += 1
        return level


@lru_cache(maxsize=None)
def _cc_nodes_cached(n):
    theta = []
    for j in range(n):
        if j == 0:
            theta.append(0.5)
        elif j in (1, 2):
            theta.append(0.0 if j == 1 else 1.0)
        else:
            lev = 3
            while 2 ** (lev - 1) + 1 <= j:
                lev += 1
            start = 2 ** (lev - 2) + 1
            theta.append((2 * (j - start) + 1) / 2 ** (lev - 1))
    x = np.sin(np.pi * (0.5 - np.array(theta, dtype=float)))
    x.setflags(write=False)
    return x


def _cc_nodes(n):
    return _cc_nodes_cached(n)


@lru_cache(maxsize=None)
def _leja_nodes(n, search):
    grid = np.linspace(-1.0, 1.0, search)
    pts = [0.0, 1.0, -1.0][:n]
    if n > 3:
        logp = np.zeros(search)
        for p in pts:
            with np.errstate(divide="ignore"):
                logp += np.log(np.abs(grid - p))
        while len(pts) < n:
            best = np.max(logp)
            cand = np.flatnonzero(logp == best)
            j = cand[np.argmin(np.abs(grid[cand]))]
            pts.append(float(grid[j]))
            with np.errstate(divide="ignore"):
                logp += np.log(np.abs(grid - grid[j]))
    x = np.array(pts, dtype=float)
    x.setflags(write=False)
    return x


def one_d_nodes(family, level):
    if level < 1:
        raise ValueError("level must be >= 1")
    return family.nodes(level)


def lagrange_1d(nodes, y):
    """Values (len(y), n) of the Lagrange basis on ``nodes`` at points ``y``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = len(nodes)
    out = np.ones((len(y), n))
    for k in range(n):
        for i in range(n):
            if i != k:
                out[:, k] *= (y - nodes[i]) / (nodes[k] - nodes[i])
    return out


@lru_cache(maxsize=None)
def _gauss(n):
    x, w = npleg.leggauss(n)
    return x, w / 2.0


@lru_cache(maxsize=None)
def _legendre_coeffs(family, level):
    """(n, n) matrix of int l_k Ptilde_a dpi with Ptilde_a orthonormal."""
    nodes = family.nodes(level)
    n = len(nodes)
    x, w = _gauss(n + 2)
    L = lagrange_1d(nodes, x)                                       # (q, n)
    P = npleg.legvander(x, n - 1) * np.sqrt(2 * np.arange(n) + 1)   # (q, n)
    C = (L * w[:, None]).T @ P
    C.setflags(write=False)
    return C


@lru_cache(maxsize=None)
def _pair_integral_1d(family, li, lj, weight):
    """(m(li), m(lj)) matrix of int y^weight l_k^(li) l_k'^(lj) dpi."""
    a, b = family.nodes(li), family.nodes(lj)
    x, w = _gauss(max(len(a), len(b)) + 2)
    A, B = lagrange_1d(a, x), lagrange_1d(b, x)
    out = (A * (w * x ** weight)[:, None]).T @ B
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _mean_1d(family, level):
    nodes = family.nodes(level)
    x, w = _gauss(len(nodes) + 2)
    out = w @ lagrange_1d(nodes, x)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

def _tensor_keys(family, nu):
    return np.array(list(itertools.product(*[range(family.m(l)) for l in nu])), dtype=np.int64)


class CollocationGrid:
    """Sparse grid Y_I with its combination-technique Lagrange basis."""

    def __init__(self, I, family=None):
        if not I.is_downward_closed():
            raise ValueError("index set is not downward closed")
        self.index_set = I
        self.family = family or NodeFamily()
        self.M = I.M
        self.coefficients = combination_coefficients(I)
        keys = set()
        for nu in I.maximal():
            keys.update(map(tuple, _tensor_keys(self.family, nu).tolist()))
        self.keys = sorted(keys)
        self.key_array = np.array(self.keys, dtype=np.int64).reshape(-1, self.M)
        self.position = {k: i for i, k in enumerate(self.keys)}
        nmax = int(self.key_array.max()) + 1 if len(self.keys) else 1
        x = self.family.nodes_by_index(nmax)
        self.coords = x[self.key_array]
        self._radix = nmax

    def __len__(self):
        return len(self.keys)

    def __contains__(self, key):
        return tuple(key) in self.position

    def key_of(self, point, tol=1e-14):
        """Key of the grid point with the given coordinates."""
        d = np.max(np.abs(self.coords - np.asarray(point, dtype=float)), axis=1)
        i = int(np.argmin(d))
        if d[i] > tol:
            raise KeyError(f"{point} is not a grid point")
        return self.keys[i]

    def index(self, key):
        try:
            return self.position[tuple(key)]
        except KeyError:
            raise KeyError(f"{key} is not a point of the grid") from None

    def coords_of(self, keys):
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, self.M)
        n = int(keys.max()) + 1 if keys.size else 1
        return self.family.nodes_by_index(max(n, 1))[keys]

    def _encode(self, keys, radix):
        keys = np.asarray(keys, dtype=np.int64)
        return keys @ (radix ** np.arange(self.M, dtype=np.int64))

    def _rows(self, tensor_keys):
        radix = max(self._radix, int(tensor_keys.max()) + 1)
        mine = self._encode(self.key_array, radix)
        order = np.argsort(mine)
        pos = np.searchsorted(mine[order], self._encode(tensor_keys, radix))
        return order[pos]

    # --- Legendre expansion -------------------------------------------
    @cached_property
    def _legendre(self):
        """Legendre coefficient matrix C (points x alphas) and the alphas."""
        alphas = set()
        for nu in self.coefficients:
            alphas.update(map(tuple, _tensor_keys(self.family, nu).tolist()))
        alphas = np.array(sorted(alphas), dtype=np.int64).reshape(-1, self.M)
        radix = int(max(alphas.max(), self.key_array.max())) + 2
        acode = self._encode(alphas, radix)
        aorder = np.argsort(acode)
        C = np.zeros((len(self), len(alphas)))
        for nu, c in self.coefficients.items():
            tk = _tensor_keys(self.family, nu)          # both point and alpha boxes
            rows = self._rows(tk)
            cols = aorder[np.searchsorted(acode[aorder], self._encode(tk, radix))]
            block = np.ones((1, 1))
            for m in range(self.M):
                block = np.kron(block, _legendre_coeffs(self.family, nu[m]))
            C[np.ix_(rows, cols)] += c * block
        return C, alphas, acode, aorder, radix

    @cached_property
    def mean(self):
        """int L_y dpi for every grid point (the quadrature weights)."""
        C, alphas, *_ = self._legendre
        zero = np.flatnonzero(~alphas.any(axis=1))
        return C[:, zero[0]].copy() if len(zero) else np.zeros(len(self))

    @cached_property
    def gram(self):
        C = self._legendre[0]
        G = C @ C.T
        return 0.5 * (G + G.T)

    def weighted_gram(self, m):
        """int y_m L_y L_y' dpi, m in 1..M (m = 0 returns the gram matrix)."""
        if m == 0:
            return self.gram
        if not 1 <= m <= self.M:
            raise ValueError("mode index out of range")
        return self._weighted_grams[m - 1]

    @cached_property
    def _weighted_grams(self):
        C, alphas, acode, aorder, radix = self._legendre
        out = []
        for d in range(self.M):
            shifted = alphas.copy()
            shifted[:, d] += 1
            code = self._encode(shifted, radix)
            pos = np.searchsorted(acode[aorder], code)
            pos = np.minimum(pos, len(acode) - 1)
            hit = acode[aorder][pos] == code
            src = np.flatnonzero(hit)
            dst = aorder[pos[hit]]
            a = alphas[src, d]
            j = (a + 1) / np.sqrt((2 * a + 1) * (2 * a + 3))
            W = (C[:, src] * j) @ C[:, dst].T
            out.append(W + W.T)
        return out

    @cached_property
    def l2_norms(self):
        C = self._legendre[0]
        return np.sqrt(np.sum(C * C, axis=1))

    # --- evaluation ------------------------------------------------------
    def basis(self, y):
        """(len(y), #grid) values of all Lagrange basis functions at points y."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = np.zeros((len(y), len(self)))
        for nu, c in self.coefficients.items():
            tk = _tensor_keys(self.family, nu)
            vals = np.ones((len(y), len(tk)))
            for m in range(self.M):
                V = lagrange_1d(self.family.nodes(nu[m]), y[:, m])
                vals *= V[:, tk[:, m]]
            out[:, self._rows(tk)] += c * vals
        return out

    def basis_at_keys(self, keys):
        """Basis values at points given by keys; exact delta rows for grid points."""
        keys = [tuple(k) for k in keys]
        out = np.zeros((len(keys), len(self)))
        other = [i for i, k in enumerate(keys) if k not in self.position]
        for i, k in enumerate(keys):
            if k in self.position:
                out[i, self.position[k]] = 1.0
        if other:
            out[other] = self.basis(self.coords_of([keys[i] for i in other]))
        return out

    def interpolate(self, values, y):
        """Sum_y values[y] L_y(y) at points y; ``values`` has one row per point."""
        values = np.asarray(values)
        if values.shape[0] != len(self):
            raise ValueError("need one value per grid point")
        return self.basis(y) @ values


def grid(I, family=None):
    return CollocationGrid(I, family)


def new_points(I, nu, family=None):
    """Keys of grid(I + {nu}) not already in grid(I)."""
    nu = tuple(nu)
    if nu not in reduced_margin(I):
        raise ValueError(f"{nu} is not in the reduced margin")
    family = family or NodeFamily()
    base = CollocationGrid(I, family)
    return [k for k in map(tuple, _tensor_keys(family, nu).tolist()) if k not in base.position]


def quadrature_weights(g):
    return dict(zip(g.keys, g.mean.tolist()))


# ---------------------------------------------------------------------------
# scalar double-combination integrals
# ---------------------------------------------------------------------------

def _terms(g, key):
    key = tuple(key)
    g.index(key)
    return [(nu, c) for nu, c in g.coefficients.items()
            if all(key[m] < g.family.m(nu[m]) for m in range(g.M))]


def lagrange_mean(g, key):
    total = 0.0
    for nu, c in _terms(g, key):
        total += c * np.prod([_mean_1d(g.family, nu[m])[key[m]] for m in range(g.M)])
    return float(total)


def lagrange_weighted_gram(g, m, key, key2):
    """int y_m L_key L_key2 dpi; m = 0 gives the plain gram entry."""
    if not 0 <= m <= g.M:
        raise ValueError("mode index out of range")
    t1, t2 = _terms(g, key), _terms(g, key2)
    total = 0.0
    for nu, c in t1:
        for mu, d in t2:
            p = c * d
            for k in range(g.M):
                w = 1 if k == m - 1 else 0
                p *= _pair_integral_1d(g.family, nu[k], mu[k], w)[key[k], key2[k]]
            total += p
    return float(total)


def lagrange_gram(g, key, key2):
    return lagrange_weighted_gram(g, 0, key, key2)


def lagrange_l2_norm(g, key):
    return float(np.sqrt(lagrange_gram(g, key, key)))
