"""Weight functions of unipotent classes for ``GL(n)``.

A unipotent class is described by a standard Levi ``M``, a nilpotent
``X0`` in ``Lie(M)`` (strictly upper triangular inside the blocks) and a
reference parabolic ``P1 = M N1`` (standard by default).  Points of the
induced class are ``pi = Id + X0 + Z`` with ``Z`` in ``Lie(N1)``.

For a regular ``a`` in ``A_M`` there is a unique ``n`` in ``N1`` with
``a pi = n^{-1} a u n`` (``u = Id + X0``); it solves a linear system on the
coordinates of ``Lie(N1)``.  For every ``P`` in ``P(M)`` and every
fundamental weight ``varpi`` of ``P`` the weight

    w_P(varpi, a, pi) = prod_beta |a^beta - a^-beta|^(rho_beta varpi(beta^vee))
                        * exp(-varpi(H_P(n)))

(product over the roots positive for ``P`` and negative for ``P1``) has a
finite non-zero limit as ``a -> 1``.  The exponents ``rho_beta`` come from
the pole order ``kappa0`` of ``exp(-2 varpi(H_P(n_beta)))`` in
``a^beta - 1`` for conjugators restricted to the single root space of
``-beta``.  The limits form a ``(G, M)``-family in ``lambda``, and

    w_M(pi) = (1/r!) sum_P (d/dt)^r|_0 w_P(t Lambda, 1, pi) / theta_P(Lambda)

with ``r = dim a_M^G``.  Because ``w_P(t Lambda) = exp(t L_P(Lambda))`` with
``L_P(Lambda) = sum_k Lambda(alpha_k^vee) log w_P(varpi_k)``, the derivative
is ``L_P(Lambda)^r`` exactly; a finite-difference path is kept as a check.

Block labels are 0-based.  Roots are pairs ``(i, j)`` of block labels with
``a^beta = a_i / a_j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    LimitDivergenceError,
    NonDominantWeightError,
    NumericalError,
    SingularSystemError,
    UsageError,
)
from .extrapolation import richardson
from .geometry import iwasawa, nilpotent_positions
from .roots import (
    AVector,
    LeviComposition,
    ParabolicDatum,
    covolume,
    levis_containing,
    parabolics_containing,
    root_vector,
    simple_roots_coroots,
)

KAPPA_STEPS = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
KAPPA_TOLERANCE = 0.1
MAX_RESAMPLES = 10
LIMIT_EPS0 = 0.1
LIMIT_LEVELS = 6
LAMBDA_SPREAD_TOL = 1e-4

# ---------------------------------------------------------------------------
# data


def _block_diagonal_mask(M: LeviComposition) -> np.ndarray:
    blk = np.array(M.block_of())
    return blk[:, None] == blk[None, :]


@dataclass(frozen=True, eq=False)
class UnipotentDatum:
    """A class representative ``u = Id + X0`` in ``M`` with reference parabolic ``P1``."""

    M: LeviComposition
    X0: np.ndarray
    P1: ParabolicDatum | None = None

    def __post_init__(self):
        X0 = np.array(self.X0, dtype=float)
        n = self.M.n
        if X0.shape != (n, n):
            raise UsageError(f"X0 must be {n}x{n}")
        if np.any(X0[~_block_diagonal_mask(self.M)] != 0):
            raise UsageError("X0 must lie in the Lie algebra of M")
        if np.any(np.tril(X0) != 0):
            raise UsageError("X0 must be strictly upper triangular")
        X0.setflags(write=False)
        object.__setattr__(self, "X0", X0)
        P1 = self.P1 if self.P1 is not None else ParabolicDatum.standard(self.M)
        if P1.levi != self.M:
            raise UsageError("reference parabolic must contain M as its Levi")
        object.__setattr__(self, "P1", P1)

    @classmethod
    def trivial(cls, M: LeviComposition, P1: ParabolicDatum | None = None) -> "UnipotentDatum":
        return cls(M, np.zeros((M.n, M.n)), P1)

    @classmethod
    def from_jordan(
        cls, M: LeviComposition, block_partitions: Sequence[Sequence[int]], P1: ParabolicDatum | None = None
    ) -> "UnipotentDatum":
        """``X0`` in Jordan form with the given Jordan type in every block of ``M``."""
        if len(block_partitions) != M.num_blocks:
            raise UsageError("one partition per block is required")
        X0 = np.zeros((M.n, M.n))
        for idx, part in zip(M.block_indices, block_partitions):
            if sum(part) != len(idx):
                raise UsageError(f"partition {tuple(part)} does not match block size {len(idx)}")
            start = idx[0]
            for size in part:
                for r in range(start, start + size - 1):
                    X0[r, r + 1] = 1.0
                start += size
        return cls(M, X0, P1)

    @property
    def n(self) -> int:
        return self.M.n

    @property
    def u(self) -> np.ndarray:
        return np.eye(self.n) + self.X0

    @property
    def n1_positions(self) -> list[tuple[int, int]]:
        return nilpotent_positions(self.P1)

    def scaled(self, s: float) -> "UnipotentDatum":
        return UnipotentDatum(self.M, s * self.X0, self.P1)

    def key(self) -> tuple:
        return (self.M.blocks, self.P1.block_order, tuple(self.X0.ravel().tolist()))

    def element(self, z: Sequence[float] | np.ndarray) -> "PiElement":
        """``pi`` with ``Z`` given by its coordinates on ``Lie(N1)`` (row-major)."""
        pos = self.n1_positions
        z = np.asarray(z, dtype=float)
        if z.shape != (len(pos),):
            raise UsageError(f"expected {len(pos)} coordinates on Lie(N1)")
        Z = np.zeros((self.n, self.n))
        for (i, j), v in zip(pos, z):
            Z[i, j] = v
        return PiElement(self, Z)

    def random_element(self, rng: np.random.Generator) -> "PiElement":
        return self.element(rng.standard_normal(len(self.n1_positions)))

    def to_json(self) -> dict:
        return {"levi": list(self.M.blocks), "X0": self.X0.tolist(), "P1": list(self.P1.block_order)}

    @classmethod
    def from_json(cls, data: dict) -> "UnipotentDatum":
        M = LeviComposition(tuple(data["levi"]))
        P1 = ParabolicDatum(M, tuple(data["P1"])) if "P1" in data else None
        return cls(M, np.array(data.get("X0", np.zeros((M.n, M.n))), dtype=float), P1)


@dataclass(frozen=True, eq=False)
class PiElement:
    """``pi = Id + X0 + Z`` with ``Z`` in ``Lie(N1)``."""

    datum: UnipotentDatum
    Z: np.ndarray

    def __post_init__(self):
        Z = np.array(self.Z, dtype=float)
        n = self.datum.n
        if Z.shape != (n, n):
            raise UsageError(f"Z must be {n}x{n}")
        allowed = np.zeros((n, n), dtype=bool)
        for i, j in self.datum.n1_positions:
            allowed[i, j] = True
        if np.any(Z[~allowed] != 0):
            raise UsageError("Z must be supported on the root spaces of N1")
        Z.setflags(write=False)
        object.__setattr__(self, "Z", Z)

    @classmethod
    def from_matrix(cls, datum: UnipotentDatum, g) -> "PiElement":
        g = np.asarray(g, dtype=float)
        return cls(datum, g - np.eye(datum.n) - datum.X0)

    @property
    def matrix(self) -> np.ndarray:
        return np.eye(self.datum.n) + self.datum.X0 + self.Z

    @property
    def coordinates(self) -> np.ndarray:
        return np.array([self.Z[i, j] for i, j in self.datum.n1_positions])

    def scaled(self, s: float) -> "PiElement":
        """``x_s = Id + s (pi - Id)``."""
        return PiElement(self.datum.scaled(s), s * self.Z)

    def conjugated(self, k: np.ndarray) -> "PiElement":
        """``k^{-1} pi k`` for a diagonal sign matrix ``k`` (keeps ``M`` and ``N1`` stable)."""
        k = np.asarray(k, dtype=float)
        if not (np.allclose(k, np.diag(np.diag(k))) and np.allclose(np.abs(np.diag(k)), 1)):
            raise UsageError("only diagonal sign matrices preserve the data")
        kinv = np.diag(1.0 / np.diag(k))
        X0 = kinv @ self.datum.X0 @ k
        return PiElement(UnipotentDatum(self.datum.M, X0, self.datum.P1), kinv @ self.Z @ k)


# ---------------------------------------------------------------------------
# class catalog


def jordan_nilpotent(partition: Sequence[int]) -> np.ndarray:
    n = sum(partition)
    X = np.zeros((n, n))
    start = 0
    for size in partition:
        for r in range(start, start + size - 1):
            X[r, r + 1] = 1.0
        start += size
    return X


def dual_partition(partition: Sequence[int]) -> tuple[int, ...]:
    part = sorted((int(p) for p in partition), reverse=True)
    if not part or part[-1] < 1:
        raise UsageError(f"invalid partition {partition}")
    return tuple(sum(1 for p in part if p > k) for k in range(part[0]))


def class_catalog(n: int) -> list[dict]:
    """Unipotent classes of ``GL(n)``: Jordan representative and Richardson Levi.

    The class with Jordan type ``lambda`` is the Richardson class of the
    standard parabolic whose Levi has block sizes given by the dual partition.
    """

    def partitions(m: int, largest: int) -> Iterable[tuple[int, ...]]:
        if m == 0:
            yield ()
            return
        for first in range(min(m, largest), 0, -1):
            for rest in partitions(m - first, first):
                yield (first,) + rest

    out = []
    for lam in partitions(n, n):
        out.append(
            {
                "partition": list(lam),
                "X0": jordan_nilpotent(lam).tolist(),
                "richardson_levi": list(dual_partition(lam)),
            }
        )
    return out


# ---------------------------------------------------------------------------
# conjugator


@dataclass(frozen=True)
class ConjugatorSolution:
    n: np.ndarray
    residual: float
    relative_residual: float
    condition: float


def _diag_from_a(a, M: LeviComposition) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape == (M.num_blocks,):
        d = a[list(M.block_of())]
    elif a.shape == (M.n,):
        d = a
        for idx in M.block_indices:
            if np.ptp(d[list(idx)]) != 0:
                raise UsageError("a must be constant on the blocks of M")
    else:
        raise UsageError("a must be given by its block values or its diagonal")
    if np.any(d <= 0):
        raise UsageError("a must have positive entries")
    return d


def _solve_on_positions(C: np.ndarray, D: np.ndarray, positions: Sequence[tuple[int, int]]) -> tuple[np.ndarray, float]:
    """Solve ``Y C - D Y = D - C`` for ``Y`` supported on ``positions``."""
    n = C.shape[0]
    if not positions:
        return np.zeros((n, n)), 1.0
    rows = np.array([p[0] for p in positions])
    cols = np.array([p[1] for p in positions])
    A = (rows[:, None] == rows[None, :]) * C[cols[None, :], cols[:, None]]
    A = A - D[rows[:, None], rows[None, :]] * (cols[:, None] == cols[None, :])
    rhs = (D - C)[rows, cols]
    s = np.linalg.svd(A, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else math.inf
    if not np.isfinite(cond) or cond > 1e15:
        raise SingularSystemError(f"conjugator system is singular (condition {cond:.3g}); is a regular?")
    y = np.linalg.solve(A, rhs)
    Y = np.zeros((n, n))
    Y[rows, cols] = y
    return Y, cond


def solve_conjugator(a, pi: PiElement, positions: Sequence[tuple[int, int]] | None = None) -> ConjugatorSolution:
    """The unique ``n = Id + Y`` in ``N1`` with ``a pi = n^{-1} a u n``.

    ``a`` is given by its block values (or its diagonal).  ``residual`` is
    ``||n (a pi) n^{-1} (a u)^{-1} - Id||_F``; ``relative_residual`` divides
    ``||n (a pi) - (a u) n||_F`` by ``||a u|| ||n||``, which stays at rounding
    level even when ``n`` has very large entries.
    """
    datum = pi.datum
    d = _diag_from_a(a, datum.M)
    pos = datum.n1_positions if positions is None else list(positions)
    for i, j in pos:
        if abs(d[i] / d[j] - 1.0) < 1e-14:
            raise SingularSystemError("a is not regular: a^alpha = 1 for a root of A_M on Lie(N1)")
    C = d[:, None] * pi.matrix
    D = d[:, None] * datum.u
    Y, cond = _solve_on_positions(C, D, pos)
    nmat = np.eye(datum.n) + Y
    resid = float(np.linalg.norm(nmat @ C @ np.linalg.inv(nmat) @ np.linalg.inv(D) - np.eye(datum.n)))
    rel = float(np.linalg.norm(nmat @ C - D @ nmat) / (np.linalg.norm(D) * np.linalg.norm(nmat)))
    return ConjugatorSolution(nmat, resid, rel, cond)


# ---------------------------------------------------------------------------
# norms v_P


def _weight_decomposition(varpi: AVector, P: ParabolicDatum) -> tuple[list[float], float]:
    """Coefficients ``c_k`` of ``varpi`` on the fundamental weights of ``P`` and the central part."""
    M = P.levi
    if varpi.n != M.n:
        raise UsageError("weight has the wrong dimension")
    coords = varpi.coords
    for idx in M.block_indices:
        if len({coords[i] for i in idx}) != 1:
            raise UsageError("weight must be constant on the blocks of M")
    data = simple_roots_coroots(P)
    cs = [varpi.pair(a) for a in data.simple_coroots]
    if any(c < 0 for c in cs):
        raise NonDominantWeightError(f"weight is not P-dominant (coefficients {[str(c) for c in cs]})")
    rest = varpi
    for c, w in zip(cs, data.fundamental_weights):
        rest = rest - w.scale(c)
    central = rest.coords[0] if rest.coords else 0
    if any(c != central for c in rest.coords):
        raise UsageError("weight does not lie in a_M^*")
    return [float(c) for c in cs], float(central)


def _top_indices(P: ParabolicDatum, k: int) -> list[int]:
    idx = P.levi.block_indices
    return sorted(i for b in P.block_order[:k] for i in idx[b])


def _minor_norm_squared(ninv: np.ndarray, cols: Sequence[int]) -> float:
    A = ninv[:, list(cols)]
    return float(np.linalg.det(A.T @ A))


def v_P_norm(varpi: AVector, n, P: ParabolicDatum, method: str = "extremal") -> float:
    """``exp(-varpi(H_P(n)))``.

    ``method="iwasawa"`` evaluates ``varpi`` on ``H_P(n)`` from the Iwasawa
    decomposition relative to ``P``; ``method="extremal"`` uses the norms of
    ``Lambda^{N_k}(n^{-1}) e_{S_k}`` where ``S_k`` are the indices of the first
    ``k`` blocks of ``P`` (Cauchy-Binet: square roots of Gram determinants of
    column sets of ``n^{-1}``).
    """
    n = np.asarray(n, dtype=float)
    cs, central = _weight_decomposition(varpi, P)
    if method == "iwasawa":
        H = iwasawa(n, P).H
        return float(math.exp(-sum(float(c) * h for c, h in zip(varpi.coords, H))))
    if method != "extremal":
        raise UsageError(f"unknown method {method!r}")
    ninv = np.linalg.inv(n)
    log_v = -central * math.log(abs(np.linalg.det(n)))
    for k, c in enumerate(cs, start=1):
        if c:
            log_v += 0.5 * c * math.log(_minor_norm_squared(ninv, _top_indices(P, k)))
    return float(math.exp(log_v))


# ---------------------------------------------------------------------------
# kappa0 and rho


@dataclass(frozen=True)
class Kappa0Estimate:
    beta: tuple[int, int]
    kappa0: int
    rho: float
    slope: float
    residual: float
    resamples: int

    def to_json(self) -> dict:
        return {
            "beta": list(self.beta),
            "kappa0": self.kappa0,
            "rho": self.rho,
            "slope": self.slope,
            "residual": self.residual,
            "resamples": self.resamples,
        }


def _root_block_positions(M: LeviComposition, i: int, j: int) -> list[tuple[int, int]]:
    """Entries of the root space of ``-beta`` for ``beta = (i, j)``: rows of block ``j``, columns of block ``i``."""
    idx = M.block_indices
    return [(r, c) for r in idx[j] for c in idx[i]]


def _kappa_slope(datum: UnipotentDatum, beta: tuple[int, int], Zb: np.ndarray, steps: Sequence[float]) -> float:
    i, j = beta
    M = datum.M
    pos = _root_block_positions(M, i, j)
    cols = list(M.block_indices[i])
    n = datum.n
    C0 = np.eye(n) + datum.X0 + Zb
    D0 = datum.u
    logs = []
    for eps in steps:
        d = np.ones(n)
        d[cols] = 1.0 + eps
        Y, _ = _solve_on_positions(d[:, None] * C0, d[:, None] * D0, pos)
        logs.append(math.log(_minor_norm_squared(np.eye(n) - Y, cols)))
    # lower pole orders dominate at the larger steps when X0 is small, so the
    # slope is read off the three smallest steps
    tail = slice(max(0, len(steps) - 3), None)
    return float(np.polyfit(np.log(steps)[tail], np.array(logs)[tail], 1)[0])


def estimate_kappa0(
    varpi: AVector | None,
    beta: tuple[int, int],
    datum: UnipotentDatum,
    Z: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    steps: Sequence[float] = KAPPA_STEPS,
) -> Kappa0Estimate:
    """Pole order ``kappa0`` of ``v_{P_beta}(varpi, n_beta)^2`` in ``a^beta - 1`` and ``rho(beta, X0)``.

    ``n_beta`` solves the conjugator equation for ``pi = u + Z`` with ``Z``
    restricted to the root space of ``-beta``; ``P_beta`` is the parabolic of
    ``M_beta`` with ``beta`` positive.  ``varpi=None`` uses the weight of the
    block ``i`` (``varpi(beta^vee) = 1``).  If ``Z`` gives an ambiguous slope
    fresh Gaussian ``Z`` are drawn, at most ``MAX_RESAMPLES`` times.
    """
    i, j = beta
    M = datum.M
    if i == j or not (0 <= i < M.num_blocks and 0 <= j < M.num_blocks):
        raise UsageError(f"invalid root {beta}")
    if varpi is None:
        scale = 1.0
    else:
        scale = float(varpi.pair(root_vector(M, i, j)))
        if scale <= 0:
            raise NonDominantWeightError("varpi(beta^vee) must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    pos = _root_block_positions(M, i, j)
    mask = np.zeros((datum.n, datum.n), dtype=bool)
    for r, c in pos:
        mask[r, c] = True

    def draw() -> np.ndarray:
        Zb = np.zeros((datum.n, datum.n))
        Zb[mask] = rng.standard_normal(mask.sum())
        return Zb

    Zb = np.where(mask, np.asarray(Z, dtype=float), 0.0) if Z is not None else draw()
    for attempt in range(MAX_RESAMPLES + 1):
        try:
            slope = scale * _kappa_slope(datum, beta, Zb, steps)
        except (SingularSystemError, ValueError, FloatingPointError):
            slope = math.nan
        if np.isfinite(slope):
            kappa = max(0, int(round(-slope)))
            resid = abs(-slope - kappa)
            if resid < KAPPA_TOLERANCE:
                return Kappa0Estimate(beta, kappa, kappa / (2 * scale), float(-slope), float(resid), attempt)
        Zb = draw()
    raise NumericalError(f"ambiguous pole order for root {beta} after {MAX_RESAMPLES} resamples")


_RHO_CACHE: dict[tuple, Kappa0Estimate] = {}


def rho_estimate(datum: UnipotentDatum, beta: tuple[int, int]) -> Kappa0Estimate:
    """Cached ``estimate_kappa0`` with the default weight and a seeded ``Z``.

    Only the blocks ``i`` and ``j`` of ``X0`` enter, so the cache key is the
    pair of block sizes and the two diagonal blocks of ``X0``.
    """
    i, j = beta
    idx = datum.M.block_indices
    key = (
        datum.M.blocks[i],
        datum.M.blocks[j],
        tuple(datum.X0[np.ix_(idx[i], idx[i])].ravel().tolist()),
        tuple(datum.X0[np.ix_(idx[j], idx[j])].ravel().tolist()),
    )
    if key not in _RHO_CACHE:
        sub_M = LeviComposition((datum.M.blocks[i], datum.M.blocks[j]))
        sel = list(idx[i]) + list(idx[j])
        sub = UnipotentDatum(sub_M, datum.X0[np.ix_(sel, sel)])
        _RHO_CACHE[key] = estimate_kappa0(None, (0, 1), sub, rng=np.random.default_rng(12345))
    est = _RHO_CACHE[key]
    return Kappa0Estimate(beta, est.kappa0, est.rho, est.slope, est.residual, est.resamples)


# ---------------------------------------------------------------------------
# w_P at a = 1


@dataclass(frozen=True)
class LimitResult:
    value: float
    residual: float
    samples: tuple[float, ...]
    flagged: bool = False

    def to_json(self) -> dict:
        return {"value": self.value, "residual": self.residual, "flagged": self.flagged}


def _generic_direction(M: LeviComposition) -> np.ndarray:
    """A fixed regular element of ``a_M`` (block values), used to approach ``a = 1``."""
    h = np.array([math.sqrt(p) for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)[: M.num_blocks]])
    return h - h.mean()


def _opposite_roots(P: ParabolicDatum, P1: ParabolicDatum) -> list[tuple[int, int]]:
    """Roots positive for ``P`` and negative for ``P1``."""
    return [(i, j) for i in range(P.levi.num_blocks) for j in range(P.levi.num_blocks)
            if i != j and P.position(i) < P.position(j) and P1.position(j) < P1.position(i)]


def _batch_limits(P: ParabolicDatum, datum: UnipotentDatum, Zs: np.ndarray, eps0: float,
                  levels: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``log w_P(varpi_k, 1, pi)`` for a stack of ``Z`` (shape ``(N, n, n)``).

    Returns the logs and relative extrapolation residuals, both ``(N, m-1)``,
    and the raw samples ``(levels, N, m-1)``.
    """
    M = datum.M
    m = M.num_blocks
    N = Zs.shape[0]
    roots = _opposite_roots(P, datum.P1)
    if not roots:
        # P = P1 and n lies in N_P, so every norm is exactly 1
        zero = np.zeros((N, m - 1))
        return zero, zero.copy(), np.zeros((levels, N, m - 1))
    H0 = _generic_direction(M)
    rhos = {beta: rho_estimate(datum, beta).rho for beta in roots}
    tops = [_top_indices(P, k) for k in range(1, m)]
    tops_blocks = [set(P.block_order[:k]) for k in range(1, m)]
    pos = datum.n1_positions
    rows = np.array([p[0] for p in pos])
    cols = np.array([p[1] for p in pos])
    same_row = rows[:, None] == rows[None, :]
    same_col = cols[:, None] == cols[None, :]
    n = datum.n
    Pi = np.eye(n) + datum.X0 + Zs
    samples = np.zeros((levels, N, m - 1))
    for lev in range(levels):
        eps = eps0 * 2.0 ** (-lev)
        for sign in (1.0, -1.0):
            a = np.exp(sign * eps * H0)
            d = a[list(M.block_of())]
            C = d[None, :, None] * Pi
            D = d[:, None] * datum.u
            A = same_row[None] * C[:, cols[None, :], cols[:, None]] - (D[rows[:, None], rows[None, :]] * same_col)[None]
            rhs = (D[None] - C)[:, rows, cols]
            y = np.linalg.solve(A, rhs[..., None])[..., 0]
            nmat = np.broadcast_to(np.eye(n), (N, n, n)).copy()
            nmat[:, rows, cols] += y
            ninv = np.linalg.inv(nmat)
            for k, (idx, top) in enumerate(zip(tops, tops_blocks)):
                B = ninv[:, :, idx]
                val = np.linalg.det(np.swapaxes(B, 1, 2) @ B)
                for (i, j), rho in rhos.items():
                    pairing = (i in top) - (j in top)
                    if pairing and rho:
                        ab = a[i] / a[j]
                        val = val * abs(ab - 1.0 / ab) ** (2.0 * rho * pairing)
                samples[lev, :, k] += 0.5 * val
    rr = richardson(samples, ratio=4.0, order=4)
    val = np.asarray(rr.value)
    if not np.all(np.isfinite(val)) or np.any(val <= 0):
        raise LimitDivergenceError(f"limit a -> 1 of w_P is not positive for P={P.block_order}; pi not generic")
    return 0.5 * np.log(val), 0.5 * np.asarray(rr.residual) / val, samples


def _log_w_fundamental(P: ParabolicDatum, pi: PiElement, eps0: float, levels: int) -> list[LimitResult]:
    """``log w_P(varpi_k, 1, pi)`` for every fundamental weight of ``P``."""
    logs, resid, samples = _batch_limits(P, pi.datum, pi.Z[None], eps0, levels)
    return [
        LimitResult(float(logs[0, k]), float(resid[0, k]), tuple(samples[:, 0, k].tolist()), flagged=resid[0, k] > 1e-6)
        for k in range(logs.shape[1])
    ]


def w_P_at_one(lam: AVector, pi: PiElement, P: ParabolicDatum, eps0: float = LIMIT_EPS0,
               levels: int = LIMIT_LEVELS) -> LimitResult:
    """``w_P(lambda, 1, pi) = prod_k w_P(varpi_k, 1, pi)^{lambda(alpha_k^vee)}`` (central part of ``lambda`` ignored)."""
    if P.levi != pi.datum.M:
        raise UsageError("P must have Levi M")
    logs = _log_w_fundamental(P, pi, eps0, levels)
    coroots = simple_roots_coroots(P).simple_coroots
    total, resid = 0.0, 0.0
    for c, lr in zip(coroots, logs):
        coef = float(lam.pair(c))
        total += coef * lr.value
        resid += abs(coef) * lr.residual
    value = math.exp(total)
    return LimitResult(value, resid, tuple(lr.value for lr in logs), any(lr.flagged for lr in logs))


# ---------------------------------------------------------------------------
# w_M


@dataclass(frozen=True)
class WeightEvaluation:
    value: float
    per_parabolic: dict = field(default_factory=dict)
    kappa0: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "per_parabolic": self.per_parabolic,
            "kappa0": self.kappa0,
            "diagnostics": self.diagnostics,
        }


def _random_lambda(M: LeviComposition, rng: np.random.Generator) -> np.ndarray:
    """A block-constant element of ``(a_M^G)^*`` (diagonal vector with trace zero)."""
    vals = rng.standard_normal(M.num_blocks)
    sizes = np.array(M.blocks, dtype=float)
    vals = vals - (sizes @ vals) / M.n
    return vals[list(M.block_of())]


def _fd_derivative(L: float, r: int, h0: float = 0.1, levels: int = 5) -> float:
    """``(d/dt)^r exp(t L)`` at ``0`` by central differences and Richardson extrapolation."""
    if r == 0:
        return 1.0
    vals = []
    for lev in range(levels):
        h = h0 * 2.0 ** (-lev)
        acc = sum((-1) ** q * math.comb(r, q) * math.exp((r / 2 - q) * h * L) for q in range(r + 1))
        vals.append(acc / h ** r)
    return richardson(vals, ratio=4.0).value


def w_M(
    pi: PiElement,
    rng: np.random.Generator | None = None,
    n_lambda: int = 3,
    derivative: str = "exact",
    eps0: float = LIMIT_EPS0,
    levels: int = LIMIT_LEVELS,
) -> WeightEvaluation:
    """``w_M(1, pi)`` from the ``(G, M)``-family ``w_P(lambda, 1, pi)``.

    ``n_lambda`` generic ``Lambda`` are drawn; ``value`` is the first, and the
    relative spread across all of them is reported and checked against
    ``LAMBDA_SPREAD_TOL``.  ``derivative="fd"`` replaces the exact ``t``
    derivative by extrapolated central differences.
    """
    datum = pi.datum
    M = datum.M
    r = M.rank
    if r == 0:
        return WeightEvaluation(1.0, diagnostics={"rank": 0})
    if derivative not in ("exact", "fd"):
        raise UsageError(f"unknown derivative mode {derivative!r}")
    rng = rng if rng is not None else np.random.default_rng(2024)
    parabolics = parabolics_containing(M)
    logs = {}
    limit_resid = 0.0
    flagged = False
    for P in parabolics:
        lr = _log_w_fundamental(P, pi, eps0, levels)
        logs[P.block_order] = lr
        limit_resid = max(limit_resid, max((x.residual for x in lr), default=0.0))
        flagged = flagged or any(x.flagged for x in lr)
    coroot_vals = {P.block_order: [np.array(c.as_floats()) for c in simple_roots_coroots(P).simple_coroots]
                   for P in parabolics}
    covs = {P.block_order: covolume(P) for P in parabolics}
    values = []
    for attempt in range(n_lambda + MAX_RESAMPLES):
        if len(values) == n_lambda:
            break
        Lam = _random_lambda(M, rng)
        total = 0.0
        ok = True
        for P in parabolics:
            pairings = [float(Lam @ c) for c in coroot_vals[P.block_order]]
            theta = math.prod(pairings) / covs[P.block_order]
            if abs(theta) < 1e-8:
                ok = False
                break
            L = sum(p * x.value for p, x in zip(pairings, logs[P.block_order]))
            deriv = L ** r if derivative == "exact" else _fd_derivative(L, r)
            total += deriv / theta
        if ok:
            values.append(total / math.factorial(r))
    if not values:
        raise NumericalError("could not find a generic Lambda")
    scale = max(abs(values[0]), 1.0)
    spread = (max(values) - min(values)) / scale
    per = {"-".join(map(str, k)): [math.exp(x.value) for x in v] for k, v in logs.items()}
    kappa = {}
    for P in parabolics:
        for beta in _opposite_roots(P, datum.P1):
            kappa[f"{beta[0]},{beta[1]}"] = rho_estimate(datum, beta).kappa0
    diag = {
        "rank": r,
        "lambda_values": values,
        "lambda_spread": spread,
        "lambda_independent": spread < LAMBDA_SPREAD_TOL,
        "limit_residual": limit_resid,
        "limit_flagged": flagged,
    }
    return WeightEvaluation(values[0], per, kappa, diag)


def _restrict_datum(datum: UnipotentDatum, part: Sequence[int]) -> tuple[UnipotentDatum, list[int]]:
    M = datum.M
    blocks = sorted(part)
    idx = [i for b in blocks for i in M.block_indices[b]]
    sub_M = LeviComposition(tuple(M.blocks[b] for b in blocks), M.kind)
    order = sorted(range(len(blocks)), key=lambda q: datum.P1.position(blocks[q]))
    sub_P1 = ParabolicDatum(sub_M, tuple(order))
    return UnipotentDatum(sub_M, datum.X0[np.ix_(idx, idx)], sub_P1), idx


def _restrict(pi: PiElement, part: Sequence[int]) -> PiElement:
    """Component of ``pi`` in ``GL`` of the indices of the blocks ``part`` of ``M``."""
    sub, idx = _restrict_datum(pi.datum, part)
    return PiElement(sub, pi.Z[np.ix_(idx, idx)])


def w_M_levi(pi: PiElement, levi: Sequence[Sequence[int]], **kwargs) -> float:
    """``w_M^L(1, pi)`` for the Levi ``L`` given as a set partition of the blocks of ``M``.

    ``L`` is a product of general linear groups, the ``(L, M)``-family is the
    product of the families of the factors, and ``pi`` is replaced by its
    component in ``L`` (entries between different parts dropped).
    """
    value = 1.0
    for part in levi:
        if len(part) > 1:
            value *= w_M(_restrict(pi, part), **kwargs).value
    return value


def w_M_class(pi: PiElement, **kwargs) -> float:
    """``sum over Q' in F(M)`` of ``w_M^{Q'}(1, pi)``.

    The term only depends on the Levi ``L`` of ``Q'`` and ``L`` with ``p`` parts
    is the Levi of ``p!`` elements of ``F(M)``.
    """
    total = 0.0
    for levi in levis_containing(pi.datum.M):
        total += math.factorial(len(levi)) * w_M_levi(pi, levi, **kwargs)
    return total


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class PolynomialFit:
    coefficients: tuple[float, ...]
    degree: int
    residual: float

    def to_json(self) -> dict:
        return {"coefficients": list(self.coefficients), "degree": self.degree, "residual": self.residual}


def scaling_fit(pi: PiElement, s_values: Sequence[float] | None = None, degree: int | None = None,
                weight=None) -> PolynomialFit:
    """Fit ``s -> w(x_s)`` by a polynomial in ``log s``; residual is the max deviation.

    ``degree`` defaults to ``dim a_M^G``; ``weight`` defaults to ``w_M_class``.
    """
    if s_values is None:
        s_values = np.exp(np.linspace(-2.0, 2.0, 17))
    weight = weight or w_M_class
    deg = pi.datum.M.rank if degree is None else degree
    ls = np.log(np.asarray(s_values, dtype=float))
    w = np.array([weight(pi.scaled(float(s))) for s in s_values])
    coef = np.polynomial.polynomial.polyfit(ls, w, deg)
    resid = float(np.max(np.abs(np.polynomial.polynomial.polyval(ls, coef) - w)))
    return PolynomialFit(tuple(float(c) for c in coef), deg, resid)


@dataclass(frozen=True)
class Calibration:
    coefficients: tuple[float, ...]
    residual: float
    n_points: int

    def to_json(self) -> dict:
        return {"coefficients": list(self.coefficients), "residual": self.residual, "n_points": self.n_points}


def calibrate(values: Sequence[float], *features: Sequence[float]) -> Calibration:
    """Least-squares fit ``values ~ sum_k c_k feature_k + c'``; residual is the max deviation."""
    y = np.asarray(values, dtype=float)
    cols = [np.asarray(f, dtype=float) for f in features] + [np.ones_like(y)]
    A = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.max(np.abs(A @ coef - y)))
    return Calibration(tuple(float(c) for c in coef), resid, len(y))


# ---------------------------------------------------------------------------
# batched evaluation


def _as_z_stack(datum: UnipotentDatum, coords: np.ndarray) -> np.ndarray:
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    pos = datum.n1_positions
    if coords.shape[1] != len(pos):
        raise UsageError(f"expected {len(pos)} coordinates on Lie(N1)")
    Zs = np.zeros((coords.shape[0], datum.n, datum.n))
    for q, (i, j) in enumerate(pos):
        Zs[:, i, j] = coords[:, q]
    return Zs


def _w_M_stack(datum: UnipotentDatum, Zs: np.ndarray, seed: int, eps0: float, levels: int) -> np.ndarray:
    M = datum.M
    r = M.rank
    N = Zs.shape[0]
    if r == 0:
        return np.ones(N)
    rng = np.random.default_rng(seed)
    parabolics = parabolics_containing(M)
    for _ in range(MAX_RESAMPLES):
        Lam = _random_lambda(M, rng)
        pairings = {P.block_order: [float(Lam @ np.array(c.as_floats())) for c in simple_roots_coroots(P).simple_coroots]
                    for P in parabolics}
        thetas = {k: math.prod(v) / covolume(P) for (k, v), P in zip(pairings.items(), parabolics)}
        if min(abs(t) for t in thetas.values()) >= 1e-8:
            break
    else:
        raise NumericalError("could not find a generic Lambda")
    total = np.zeros(N)
    for P in parabolics:
        logs, _, _ = _batch_limits(P, datum, Zs, eps0, levels)
        L = logs @ np.array(pairings[P.block_order])
        total += L ** r / thetas[P.block_order]
    return total / math.factorial(r)


def w_M_batch(datum: UnipotentDatum, coords, seed: int = 2024, eps0: float = LIMIT_EPS0,
              levels: int = LIMIT_LEVELS) -> np.ndarray:
    """``w_M(1, pi)`` for many ``pi`` given by their ``Lie(N1)`` coordinates (one ``Lambda``)."""
    return _w_M_stack(datum, _as_z_stack(datum, coords), seed, eps0, levels)


def w_M_class_batch(datum: UnipotentDatum, coords, seed: int = 2024, eps0: float = LIMIT_EPS0,
                    levels: int = LIMIT_LEVELS) -> np.ndarray:
    """``w_M_class`` for many ``pi`` given by their ``Lie(N1)`` coordinates."""
    Zs = _as_z_stack(datum, coords)
    total = np.zeros(Zs.shape[0])
    for levi in levis_containing(datum.M):
        term = np.ones(Zs.shape[0])
        for part in levi:
            if len(part) > 1:
                sub, idx = _restrict_datum(datum, part)
                term = term * _w_M_stack(sub, Zs[:, idx][:, :, idx], seed, eps0, levels)
        total += math.factorial(len(levi)) * term
    return total

