"""Geometry of the symmetric space ``SL(n,R)/SO(n)``.

Distances are measured from the base point ``x_0 = SO(n)`` and normalised
so that ``r(g x_0, x_0)^2 = sum_i (log lambda_i(g^T g))^2``.  Equivalently,
with ``g = exp(Y) k`` the Cartan decomposition, ``r^2 = 4 tr(Y^2)``; on the
SPD model ``P = g g^T`` this is the affine-invariant metric
``tr((P^{-1} dP)^2)``.  The exponential map ``p -> X``, ``Y -> exp(Y) x_0``
has Jacobian ``prod_{i<j} sinh(y_i - y_j)/(y_i - y_j)`` relative to the flat
metric ``4 tr(Y^2)`` on ``p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import _kernels
from .errors import NumericalError, UsageError
from .roots import LeviComposition, ParabolicDatum

#: Eigenvalues of ``g g^T`` below this are treated as a singular input.
LOG_FLOOR = 1e-300

#: Normalisation constant ``c`` of the metric ``<X, Y> = c tr(XY)`` on ``p``.
METRIC_TRACE_SCALE = 4.0


def as_matrix(g, kind: str = "SL", tol: float = 1e-12) -> np.ndarray:
    """Validate and return a square float matrix; ``kind="SL"`` also checks ``|det| = 1``."""
    a = np.array(g, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise UsageError("expected a square matrix")
    if kind == "SL" and abs(abs(np.linalg.det(a)) - 1.0) > tol * max(1.0, np.abs(a).max() ** a.shape[0]):
        raise UsageError(f"|det g| = {abs(np.linalg.det(a))!r} differs from 1")
    return a


def random_sl(n: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Gaussian matrices normalised to ``|det| = 1`` (and ``det > 0`` after a row flip)."""
    g = rng.standard_normal((1 if size is None else size, n, n))
    det = np.linalg.det(g)
    g = g / np.abs(det)[:, None, None] ** (1.0 / n)
    g[det < 0, 0, :] *= -1
    return g[0] if size is None else g


def unipotent3(x: float, y: float, z: float) -> np.ndarray:
    """``u(x, y, z) = [[1, x, y], [0, 1, z], [0, 0, 1]]``."""
    return np.array([[1.0, x, y], [0.0, 1.0, z], [0.0, 0.0, 1.0]])


def nilpotent_positions(P: ParabolicDatum) -> list[tuple[int, int]]:
    """Matrix entries of ``Lie(N_P)`` in row-major order (original coordinates)."""
    M = P.levi
    blk = M.block_of()
    pos = {b: P.position(b) for b in range(M.num_blocks)}
    return [(i, j) for i in range(M.n) for j in range(M.n) if pos[blk[i]] < pos[blk[j]]]


def nilpotent_matrix(P: ParabolicDatum, x) -> np.ndarray:
    """``n(x) = Id + X`` with ``X`` the element of ``Lie(N_P)`` with coordinates ``x``."""
    entries = nilpotent_positions(P)
    x = np.asarray(x, dtype=float)
    if x.shape != (len(entries),):
        raise UsageError(f"expected {len(entries)} nilpotent coordinates, got {x.shape}")
    out = np.eye(P.levi.n)
    for (i, j), v in zip(entries, x):
        out[i, j] = v
    return out


# ---------------------------------------------------------------------------
# decompositions


@dataclass(frozen=True)
class IwasawaParts:
    """``g = n @ m @ k`` with ``n in N_P``, ``m in M(R)`` and ``k in O(n)``.

    ``m = exp(diag(H)) @ m1`` where ``H`` is block constant and every block of
    ``m1`` has ``|det| = 1``.  ``H_blocks[b]`` is the sum of ``log t_i`` over
    block ``b`` (the coordinate of ``H_P(g)`` against the determinant character
    of that block), ``H`` is the same point written as a vector of ``a_0``.
    """

    n: np.ndarray
    m: np.ndarray
    k: np.ndarray
    H: np.ndarray
    H_blocks: np.ndarray
    residual: float

    @property
    def m1(self) -> np.ndarray:
        return np.diag(np.exp(-self.H)) @ self.m


def _rq_positive(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r, q = sla.rq(a)
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return r * s[None, :], s[:, None] * q


def iwasawa(g, P: ParabolicDatum | None = None) -> IwasawaParts:
    """Iwasawa decomposition relative to ``P`` (the Borel of ``GL(n)`` by default)."""
    g = as_matrix(g, kind="any")
    n = g.shape[0]
    if P is None:
        P = ParabolicDatum.standard(LeviComposition.minimal(n))
    if P.levi.n != n:
        raise UsageError("parabolic and matrix sizes differ")
    if abs(np.linalg.det(g)) < 1e-300 or np.linalg.cond(g) > 1e15:
        raise NumericalError("singular matrix has no Iwasawa decomposition")
    perm = P.index_permutation()
    Q = np.eye(n)[perm]
    r, kk = _rq_positive(Q @ g)
    t = np.diag(r)
    # block structure in permuted coordinates
    sizes = [P.levi.blocks[b] for b in P.block_order]
    D = np.zeros_like(r)
    start = 0
    for s in sizes:
        D[start:start + s, start:start + s] = r[start:start + s, start:start + s]
        start += s
    nperm = r @ np.linalg.inv(D)
    nmat = Q.T @ nperm @ Q
    mmat = Q.T @ D @ Q
    k = Q.T @ kk
    logt = np.log(t)
    H_blocks = np.zeros(P.levi.num_blocks)
    H = np.zeros(n)
    for b, idx in enumerate(P.levi.block_indices):
        pos = [perm.index(i) for i in idx]
        H_blocks[b] = logt[pos].sum()
        H[list(idx)] = H_blocks[b] / len(idx)
    residual = float(np.linalg.norm(nmat @ mmat @ k - g))
    return IwasawaParts(nmat, mmat, k, H, H_blocks, residual)


@dataclass(frozen=True)
class PolarParts:
    """``g = expm(Y) @ k`` with ``Y`` symmetric and ``k`` orthogonal."""

    Y: np.ndarray
    k: np.ndarray
    residual: float
    eigenvalues: np.ndarray = field(repr=False)

    def to_json(self) -> dict:
        return {"Y": self.Y.tolist(), "k": self.k.tolist(), "residual": self.residual}


def _sym_function(w: np.ndarray, V: np.ndarray, f) -> np.ndarray:
    return (V * f(w)[None, :]) @ V.T


def cartan_polar(g) -> PolarParts:
    """Cartan decomposition ``g = exp(Y(g)) k(g)``, ``Y = log(g g^T)/2``.

    The eigendecomposition of ``g g^T`` is taken from the singular value
    decomposition ``g = U S V^T`` (``g g^T = U S^2 U^T``), which keeps
    ``k = U V^T`` orthogonal to working precision even for badly conditioned
    ``g``.
    """
    g = as_matrix(g, kind="any")
    U, s, Vt = np.linalg.svd(g)
    if s.min() ** 2 < LOG_FLOOR:
        raise NumericalError(
            f"g g^T is not numerically positive definite (smallest eigenvalue {s.min() ** 2:.3e})"
        )
    logs = np.log(s)
    Y = _sym_function(logs, U, lambda x: x)
    k = U @ Vt
    residual = float(np.linalg.norm(_sym_function(s, U, lambda x: x) @ k - g))
    return PolarParts(Y, k, residual, logs)


@dataclass(frozen=True)
class KAKParts:
    """``g = k1 @ diag(exp(H)) @ k2`` with ``H`` sorted descending and ``det k1 = 1``."""

    k1: np.ndarray
    H: np.ndarray
    k2: np.ndarray
    residual: float


def kak(g) -> KAKParts:
    g = as_matrix(g, kind="any")
    U, s, Vt = np.linalg.svd(g)
    if s.min() <= 0:
        raise NumericalError("singular matrix has no KAK decomposition")
    if np.linalg.det(U) < 0:
        U[:, -1] *= -1
        Vt[-1, :] *= -1
    H = np.log(s)
    residual = float(np.linalg.norm(U @ np.diag(s) @ Vt - g))
    return KAKParts(U, H, Vt, residual)


# ---------------------------------------------------------------------------
# distance, Jacobian, curvature


def geodesic_distance_squared(g) -> float:
    """``r(g x_0, x_0)^2 = sum_i (log lambda_i(g^T g))^2``."""
    g = as_matrix(g, kind="any")
    w = np.linalg.eigvalsh(g.T @ g)
    if w.min() < LOG_FLOOR:
        raise NumericalError("g^T g is not numerically positive definite")
    return float(np.sum(np.log(w) ** 2))


def geodesic_distance(g) -> float:
    return math.sqrt(geodesic_distance_squared(g))


def geodesic_distance_squared_batch(G) -> np.ndarray:
    """Vectorised :func:`geodesic_distance_squared` over a stack of matrices."""
    return _kernels.r2_batch(G)


def explicit_r2_unipotent(x: float) -> float:
    """Closed form of ``r^2(u(x, 0, 0))`` in ``SL(3)``.

    ``u(x,0,0)`` has the single nontrivial singular-value pair of the
    ``SL(2)`` unipotent ``[[1,x],[0,1]]``, so
    ``r^2 = 2 log^2(1 + x^2/2 + sqrt(x^2 + x^4/4)) = 8 arcsinh^2(|x|/2)``.
    """
    return 2.0 * math.log(1.0 + x * x / 2.0 + math.sqrt(x * x + x ** 4 / 4.0)) ** 2


def _sinhc(x):
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    big = np.abs(x) > 1e-4
    out[big] = np.sinh(x[big]) / x[big]
    small = ~big
    out[small] = 1.0 + x[small] ** 2 / 6.0 + x[small] ** 4 / 120.0
    return out


def exp_jacobian_from_eigenvalues(h) -> np.ndarray:
    """``prod_{i<j} sinh(h_i - h_j)/(h_i - h_j)`` along the last axis of ``h``."""
    h = np.asarray(h, dtype=float)
    n = h.shape[-1]
    out = np.ones(h.shape[:-1])
    for i in range(n):
        for j in range(i + 1, n):
            out = out * _sinhc(h[..., i] - h[..., j])
    return out


def exp_jacobian(X) -> float:
    """Jacobian of ``Y -> exp(Y) x_0`` at ``X`` (restricted-root product formula)."""
    X = np.asarray(X, dtype=float)
    if not np.allclose(X, X.T, atol=1e-12):
        raise UsageError("X must be symmetric")
    h = np.sort(np.linalg.eigvalsh(X))[::-1]
    return float(exp_jacobian_from_eigenvalues(h))


def symmetric_traceless_basis(n: int) -> list[np.ndarray]:
    """Orthonormal basis of the symmetric traceless matrices under ``tr(AB)``.

    Ordering: the diagonal matrices ``(e_11+...+e_kk - k e_{k+1,k+1})/sqrt(k(k+1))``
    for ``k = 1..n-1``, followed by ``(e_ij + e_ji)/sqrt(2)`` for ``i < j`` in
    row-major order.
    """
    out = []
    for k in range(1, n):
        d = np.zeros(n)
        d[:k] = 1.0
        d[k] = -k
        out.append(np.diag(d) / math.sqrt(k * (k + 1)))
    for i in range(n):
        for j in range(i + 1, n):
            e = np.zeros((n, n))
            e[i, j] = e[j, i] = 1.0 / math.sqrt(2.0)
            out.append(e)
    return out


def exp_jacobian_fd(X, step: float = 1e-6) -> float:
    """Finite-difference ``|det d exp|`` at ``X``.

    The map ``Y -> P = expm(2Y)`` (the SPD model of ``exp(Y) x_0``) is
    differentiated by central differences along an orthonormal basis of
    ``p``; the pulled-back metric ``tr(P^{-1} dP P^{-1} dP)`` is compared with
    the flat metric ``4 tr(Y^2)`` on ``p``.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    basis = symmetric_traceless_basis(n)
    P = sla.expm(2 * X)
    Pinv = np.linalg.inv(P)
    J = [(sla.expm(2 * (X + step * E)) - sla.expm(2 * (X - step * E))) / (2 * step) for E in basis]
    G = np.array([[np.trace(Pinv @ A @ Pinv @ B) for B in J] for A in J]) / METRIC_TRACE_SCALE
    return float(math.sqrt(np.linalg.det(G)))


def scalar_curvature(n: int) -> float:
    """Scalar curvature of ``SL(n,R)/SO(n)`` for the metric ``4 tr(XY)`` on ``p``.

    Uses ``R = (1/c) sum_{a,b} tr([E_a, E_b]^2)`` for an orthonormal basis of
    ``p`` under ``tr`` and ``c`` = :data:`METRIC_TRACE_SCALE`; the value is
    ``-n(n-1)(n+2)/(4 c)``, i.e. ``-1`` for ``n = 2`` and ``-15/4`` for ``n = 3``.
    """
    basis = symmetric_traceless_basis(n)
    total = 0.0
    for A in basis:
        for B in basis:
            C = A @ B - B @ A
            total += np.trace(C @ C)
    return float(total / METRIC_TRACE_SCALE)


def scalar_curvature_fd(n: int, step: float = 1e-3) -> float:
    """Finite-difference scalar curvature from the metric in normal coordinates.

    In coordinates ``A -> P = expm(A)`` around the identity (geodesic normal
    coordinates for the affine-invariant metric, up to a constant factor),
    ``R = -(3/2) sum_{a,c} d_c^2 g_aa(0)`` where ``g_ab = tr(P^{-1} d_a P P^{-1} d_b P)``
    and the sum runs over an orthonormal basis for ``g(0)``.
    """
    basis = symmetric_traceless_basis(n)
    def g_aa(A, E):
        P = sla.expm(A)
        _, dP = sla.expm_frechet(A, E)
        Pinv = np.linalg.inv(P)
        M = Pinv @ dP
        return np.trace(M @ M)

    total = 0.0
    zero = np.zeros((n, n))
    for Ea in basis:
        base = g_aa(zero, Ea)
        for Ec in basis:
            plus = g_aa(step * Ec, Ea)
            minus = g_aa(-step * Ec, Ea)
            total += (plus - 2 * base + minus) / step ** 2
    return float(-1.5 * total)


# ---------------------------------------------------------------------------
# Taylor and lower-bound diagnostics


@dataclass
class TaylorBoundReport:
    """Diagnostics for ``r^2(n(x))`` near ``x = 0`` and for the horospherical lower bound.

    * ``max_ratio_defect``: ``max |4 r^2/|x|^2 - 1|`` over the small samples.
    * ``fitted_linear_constant``: least-squares ``C`` in ``|4 r^2/|x|^2 - 1| <= C |x|``.
    * ``leading_constant``: the limit of ``r^2/|x|^2`` estimated from the smallest samples.
    * ``leading_defect_constant``: ``C'`` with ``|r^2/|x|^2 - leading| <= C' |x|``.
    * ``inf_arcsinh_ratio`` and ``inf_log_ratio``: infima over all nonzero samples
      of ``r / arcsinh |x|`` and ``r / log(1 + |x|)``.
    """

    n_small: int
    n_large: int
    skipped_zero: int
    max_ratio_defect: float
    fitted_linear_constant: float
    leading_constant: float
    leading_defect_constant: float
    inf_arcsinh_ratio: float
    inf_log_ratio: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def taylor_and_bound_checks(
    samples,
    P: ParabolicDatum | None = None,
    taylor_radius: float = 1.0,
) -> TaylorBoundReport:
    """Evaluate the Taylor and lower-bound diagnostics on nilpotent coordinates.

    ``samples`` is an array of shape ``(N, dim N_P)``; ``P`` defaults to the
    Borel of ``GL(3)``.  Samples with ``|x| <= taylor_radius`` enter the Taylor
    diagnostics, all nonzero samples enter the bound diagnostics.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if P is None:
        P = ParabolicDatum.standard(LeviComposition.minimal(3))
    norms = np.linalg.norm(samples, axis=1)
    nonzero = norms > 0
    skipped = int((~nonzero).sum())
    xs, nrm = samples[nonzero], norms[nonzero]
    G = np.array([nilpotent_matrix(P, x) for x in xs])
    r2 = geodesic_distance_squared_batch(G) if len(G) else np.zeros(0)
    small = nrm <= taylor_radius

    ratio = 4.0 * r2[small] / nrm[small] ** 2
    defect = np.abs(ratio - 1.0)
    if small.any():
        max_def = float(defect.max())
        C = float(np.sum(defect * nrm[small]) / np.sum(nrm[small] ** 2))
        q = r2[small] / nrm[small] ** 2
        order = np.argsort(nrm[small])
        lead = float(q[order[0]])
        rest = nrm[small] > nrm[small][order[0]]
        Cp = float(np.max(np.abs(q[rest] - lead) / nrm[small][rest])) if rest.any() else 0.0
    else:
        max_def = C = lead = Cp = float("nan")
    r = np.sqrt(r2)
    inf_as = float(np.min(r / np.arcsinh(nrm))) if len(r) else float("nan")
    inf_log = float(np.min(r / np.log1p(nrm))) if len(r) else float("nan")
    return TaylorBoundReport(
        n_small=int(small.sum()),
        n_large=int((~small).sum()),
        skipped_zero=skipped,
        max_ratio_defect=max_def,
        fitted_linear_constant=C,
        leading_constant=lead,
        leading_defect_constant=Cp,
        inf_arcsinh_ratio=inf_as,
        inf_log_ratio=inf_log,
    )


def bi_invariance_defect(g, rng: np.random.Generator) -> float:
    """``max |r(g) - r(g^{-1})|, |r(g) - r(k1 g k2)|`` for random rotations."""
    from scipy.stats import special_ortho_group

    n = g.shape[0]
    k1 = special_ortho_group.rvs(n, random_state=rng)
    k2 = special_ortho_group.rvs(n, random_state=rng)
    r = geodesic_distance(g)
    return max(abs(r - geodesic_distance(np.linalg.inv(g))), abs(r - geodesic_distance(k1 @ g @ k2)))
