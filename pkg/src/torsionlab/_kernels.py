"""Batched hot kernels with a numba implementation and a numpy fallback.

Each public function dispatches on :func:`torsionlab._accel.backend`.  The
two paths compute the same quantities; the numba path uses a cyclic Jacobi
eigensolver on each small symmetric matrix, the numpy path uses the
stacked LAPACK SVD behind :func:`numpy.linalg.svd`.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import backend, njit
from .errors import NumericalError

_LOG_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# numba implementations


@njit(cache=True)
def _jacobi_eigh(a, w, v):
    """Eigen-decomposition of the symmetric matrix ``a`` (destroyed) into ``w``, ``v``."""
    n = a.shape[0]
    for i in range(n):
        for j in range(n):
            v[i, j] = 1.0 if i == j else 0.0
    for _sweep in range(60):
        off = 0.0
        scale = 0.0
        for i in range(n):
            scale += a[i, i] * a[i, i]
            for j in range(i + 1, n):
                off += a[i, j] * a[i, j]
        if off <= 1e-34 * scale or off == 0.0:
            break
        for p in range(n):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    for i in range(n):
        w[i] = a[i, i]


@njit(cache=True)
def _polar_batch_numba(G, r2, yeig, K):
    N, n, _ = G.shape
    a = np.empty((n, n))
    w = np.empty(n)
    v = np.empty((n, n))
    bad = 0
    for m in range(N):
        for i in range(n):
            for j in range(n):
                s = 0.0
                for k in range(n):
                    s += G[m, i, k] * G[m, j, k]
                a[i, j] = s
        _jacobi_eigh(a, w, v)
        acc = 0.0
        for i in range(n):
            if w[i] < 1e-300:
                bad += 1
                w[i] = 1e-300
            lw = np.log(w[i])
            acc += lw * lw
        r2[m] = acc
        # eigenvalues of Y = log(w)/2, sorted descending
        order = np.argsort(-w)
        for i in range(n):
            yeig[m, i] = 0.5 * np.log(w[order[i]])
        # k = V diag(w^-1/2) V^T g
        for i in range(n):
            for j in range(n):
                s = 0.0
                for l in range(n):
                    s += v[i, l] * v[j, l] / np.sqrt(w[l])
                a[i, j] = s
        for i in range(n):
            for j in range(n):
                s = 0.0
                for l in range(n):
                    s += a[i, l] * G[m, l, j]
                K[m, i, j] = s
    return bad


@njit(cache=True)
def _r2_batch_numba(G, r2):
    N, n, _ = G.shape
    a = np.empty((n, n))
    w = np.empty(n)
    v = np.empty((n, n))
    bad = 0
    for m in range(N):
        for i in range(n):
            for j in range(n):
                s = 0.0
                for k in range(n):
                    s += G[m, k, i] * G[m, k, j]
                a[i, j] = s
        _jacobi_eigh(a, w, v)
        acc = 0.0
        for i in range(n):
            if w[i] < 1e-300:
                bad += 1
                w[i] = 1e-300
            lw = np.log(w[i])
            acc += lw * lw
        r2[m] = acc
    return bad


@njit(cache=True)
def _monomials_numba(X, exps, coeffs, out):
    N, d = X.shape
    M = exps.shape[0]
    for m in range(N):
        acc = 0.0
        for k in range(M):
            term = coeffs[k]
            for i in range(d):
                e = exps[k, i]
                if e != 0:
                    term *= X[m, i] ** e
            acc += term
        out[m] = acc


# ---------------------------------------------------------------------------
# numpy implementations


def _polar_batch_numpy(G):
    # SVD of g rather than eigh(g g^T): forming g g^T squares the condition
    # number and loses the small eigenvalues of unipotent-like matrices
    U, s, Vt = np.linalg.svd(G)
    bad = int(np.count_nonzero(s < math.sqrt(_LOG_FLOOR)))
    ls = np.log(np.maximum(s, math.sqrt(_LOG_FLOOR)))
    r2 = 4.0 * np.sum(ls * ls, axis=-1)
    return r2, ls, U @ Vt, bad


def _r2_batch_numpy(G):
    s = np.linalg.svd(G, compute_uv=False)
    bad = int(np.count_nonzero(s < math.sqrt(_LOG_FLOOR)))
    ls = np.log(np.maximum(s, math.sqrt(_LOG_FLOOR)))
    return 4.0 * np.sum(ls * ls, axis=-1), bad


def _monomials_numpy(X, exps, coeffs):
    out = np.zeros(X.shape[0])
    for k in range(exps.shape[0]):
        term = np.full(X.shape[0], coeffs[k])
        for i in range(X.shape[1]):
            e = int(exps[k, i])
            if e:
                term = term * X[:, i] ** e
        out += term
    return out


# ---------------------------------------------------------------------------
# dispatch


def _as_stack(G) -> np.ndarray:
    G = np.ascontiguousarray(G, dtype=np.float64)
    if G.ndim == 2:
        G = G[None]
    if G.ndim != 3 or G.shape[1] != G.shape[2]:
        raise ValueError("expected a stack of square matrices")
    return G


def polar_batch(G):
    """For each ``g``: ``r^2 = sum log^2 eig(g g^T)``, eigenvalues of ``Y(g)`` (descending) and ``k(g)``."""
    G = _as_stack(G)
    if backend() == "numba":
        N, n, _ = G.shape
        r2 = np.empty(N)
        yeig = np.empty((N, n))
        K = np.empty_like(G)
        bad = _polar_batch_numba(G, r2, yeig, K)
    else:
        r2, yeig, K, bad = _polar_batch_numpy(G)
    if bad:
        raise NumericalError(f"{bad} eigenvalue(s) of g g^T below {_LOG_FLOOR:g}; matrix is numerically singular")
    return r2, yeig, K


def r2_batch(G):
    """``sum_i log^2 lambda_i(g^T g)`` for every matrix of the stack."""
    G = _as_stack(G)
    if backend() == "numba":
        r2 = np.empty(G.shape[0])
        bad = _r2_batch_numba(G, r2)
    else:
        r2, bad = _r2_batch_numpy(G)
    if bad:
        raise NumericalError(f"{bad} eigenvalue(s) of g^T g below {_LOG_FLOOR:g}; matrix is numerically singular")
    return r2


def monomials(X, exps, coeffs):
    """Evaluate ``sum_k coeffs[k] prod_i X[:, i] ** exps[k, i]``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    exps = np.ascontiguousarray(exps, dtype=np.int64)
    coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
    if backend() == "numba":
        out = np.empty(X.shape[0])
        _monomials_numba(X, exps, coeffs, out)
        return out
    return _monomials_numpy(X, exps, coeffs)
