"""Heat-kernel parametrix on ``SL(n,R)/SO(n)`` and the ``GL(3)`` cancellation checks.

The representations ``nu_p = Lambda^p Ad_p^*`` of ``SO(n)`` act on the
exterior powers of the space ``S`` of symmetric traceless matrices; their
characters are the elementary symmetric polynomials of the eigenvalues of
``Ad(k)`` on ``S``.  The parametrix is

    h_t(g) = (4 pi t)^{-d/2} psi(r(g)) exp(-r(g)^2 / 4t) (a_0(g) + a_1 t),

with ``a_0(g) = tr nu(k(g)) j(Y(g))^{-1/2}`` and ``a_1`` the identity value
of the second coefficient (only used near the identity).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import interp1d

from . import _kernels
from .errors import UnsupportedOrderError, UsageError
from .geometry import (
    cartan_polar,
    exp_jacobian_from_eigenvalues,
    geodesic_distance_squared,
    scalar_curvature,
    symmetric_traceless_basis,
)

#: Radius below which the order-1 parametrix (with ``a_1`` frozen at the identity) is allowed.
NEAR_IDENTITY_RADIUS = 0.5


def binom(m: int, q: int) -> int:
    """Binomial coefficient, zero outside ``0 <= q <= m``."""
    if q < 0 or q > m or m < 0:
        return 0
    return math.comb(m, q)


def symspace_dim(n: int) -> int:
    return n * (n + 1) // 2 - 1


# ---------------------------------------------------------------------------
# representations of K


@dataclass(frozen=True)
class KRep:
    """A finite-dimensional representation of ``SO(n)`` given through its character.

    ``kind`` is ``"trivial"``, ``"lambda_p"`` (``Lambda^p`` of the adjoint action
    on ``S``) or ``"external"`` (a user-supplied ``character(k)``).
    """

    kind: str
    n: int
    p: int = 0
    external_dim: int = 0
    character: Callable[[np.ndarray], float] | None = field(default=None, compare=False)

    @classmethod
    def trivial(cls, n: int) -> "KRep":
        return cls("trivial", n)

    @classmethod
    def lambda_p(cls, n: int, p: int) -> "KRep":
        if not 0 <= p <= symspace_dim(n):
            raise UsageError(f"p={p} outside 0..{symspace_dim(n)}")
        return cls("lambda_p", n, p)

    @classmethod
    def external(cls, n: int, dim: int, character: Callable[[np.ndarray], float]) -> "KRep":
        return cls("external", n, external_dim=dim, character=character)

    @property
    def dim(self) -> int:
        if self.kind == "trivial":
            return 1
        if self.kind == "lambda_p":
            return binom(symspace_dim(self.n), self.p)
        return self.external_dim

    def trace(self, k: np.ndarray) -> float:
        if self.kind == "trivial":
            return 1.0
        if self.kind == "lambda_p":
            return nu_p_trace(k, self.p)
        return float(self.character(k))


def _check_orthogonal(k: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise UsageError("k must be square")
    if np.abs(k.T @ k - np.eye(k.shape[0])).max() > tol:
        raise UsageError("k is not orthogonal")
    return k


def ad_p_matrix(k) -> np.ndarray:
    """Matrix of ``Y -> k Y k^T`` on ``S`` in the basis of :func:`symmetric_traceless_basis`."""
    k = _check_orthogonal(k)
    basis = symmetric_traceless_basis(k.shape[0])
    return np.array([[np.trace(Ea @ k @ Eb @ k.T) for Eb in basis] for Ea in basis])


def elementary_symmetric(values) -> np.ndarray:
    """``e_0..e_m`` of ``values`` (real parts), from the characteristic polynomial."""
    coeffs = np.poly(np.asarray(values))
    signs = (-1.0) ** np.arange(len(coeffs))
    return np.real(coeffs * signs)


def nu_p_traces(k) -> np.ndarray:
    """``tr Lambda^p Ad(k)`` for all ``p = 0..dim S``."""
    A = ad_p_matrix(k)
    return elementary_symmetric(np.linalg.eigvals(A))


def nu_p_trace(k, p: int) -> float:
    k = np.asarray(k, dtype=float)
    m = symspace_dim(k.shape[0])
    if not 0 <= p <= m:
        raise UsageError(f"p={p} outside 0..{m}")
    return float(nu_p_traces(k)[p])


def so3_nu_traces_from_trace(trk) -> np.ndarray:
    """``tr nu_p(k)`` for ``p = 0..5`` and ``k in SO(3)``, from ``tr k`` alone.

    ``Ad(k)`` on ``S`` has eigenvalues ``1, e^{+-i phi}, e^{+-2 i phi}`` where
    ``phi`` is the rotation angle, so the characteristic polynomial is
    ``(x - 1)(x^2 - 2 cos(phi) x + 1)(x^2 - 2 cos(2 phi) x + 1)``.
    Returns shape ``(..., 6)``.
    """
    c1 = np.clip((np.asarray(trk, dtype=float) - 1.0) / 2.0, -1.0, 1.0)
    c2 = 2 * c1 * c1 - 1
    b1, b2 = 2 * c1, 2 * c2
    # (x^2 - b1 x + 1)(x^2 - b2 x + 1) = x^4 - s x^3 + q x^2 - s x + 1
    s = b1 + b2
    q = 2 + b1 * b2
    one = np.ones_like(c1)
    # multiply by (x - 1): coefficients of x^5..x^0
    quartic = [one, -s, q, -s, one]
    quintic = [quartic[0]] + [quartic[i] - quartic[i - 1] for i in range(1, 5)] + [-quartic[4]]
    signs = [1, -1, 1, -1, 1, -1]
    return np.stack([sg * c for sg, c in zip(signs, quintic)], axis=-1)


def sum_principal_minors(A, p: int) -> float:
    """Oracle for ``tr Lambda^p A``: sum of all ``p x p`` principal minors."""
    import itertools

    A = np.asarray(A, dtype=float)
    if p == 0:
        return 1.0
    return float(sum(np.linalg.det(A[np.ix_(idx, idx)]) for idx in itertools.combinations(range(A.shape[0]), p)))


# ---------------------------------------------------------------------------
# coefficients


def a0_coefficient(g, nu: KRep) -> float:
    """``tr nu(k(g)) j(Y(g))^{-1/2}``."""
    parts = cartan_polar(g)
    j = float(exp_jacobian_from_eigenvalues(parts.eigenvalues))
    return nu.trace(parts.k) / math.sqrt(j)


def a1_identity_coefficient(p: int, dim_tau: int = 1, R: float | None = None) -> float:
    """``-(R dim tau / 6)(C(5,p) - 6 C(3,p-1))`` for ``SL(3)``; ``R`` defaults to :func:`scalar_curvature`."""
    if R is None:
        R = scalar_curvature(3)
    return -(R * dim_tau / 6.0) * (binom(5, p) - 6 * binom(3, p - 1))


def a1_bracket(p: int) -> int:
    return binom(5, p) - 6 * binom(3, p - 1)


def alternating_sum(values: Sequence[int], start: int = 1) -> int:
    """``sum_p (-1)^p p values[p]`` for ``p >= start`` (exact integers)."""
    return sum((-1) ** p * p * values[p] for p in range(start, len(values)))


# ---------------------------------------------------------------------------
# cutoff and parametrix


@dataclass(frozen=True)
class Cutoff:
    """Quintic smoothstep: 1 on ``[0, a]``, 0 on ``[b, inf)``, ``C^2`` in between."""

    a: float = 0.5
    b: float = 1.0

    def __post_init__(self):
        if not 0 <= self.a < self.b:
            raise UsageError("cutoff needs 0 <= a < b")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        x = np.clip((r - self.a) / (self.b - self.a), 0.0, 1.0)
        return 1.0 - x ** 3 * (10 - 15 * x + 6 * x * x)


def h_t_parametrix(
    t: float,
    g,
    nu: KRep,
    order: int = 0,
    cutoff: Cutoff = Cutoff(),
    R: float | None = None,
    near_identity_radius: float = NEAR_IDENTITY_RADIUS,
) -> float:
    """Pointwise parametrix ``h_t(g)`` truncated at ``order`` (0 or 1)."""
    if order not in (0, 1):
        raise UnsupportedOrderError(f"parametrix order {order} is not available (only 0 and 1)")
    if not 0 < t <= 1:
        raise UsageError("t must lie in (0, 1]")
    g = np.asarray(g, dtype=float)
    n = g.shape[0]
    d = symspace_dim(n)
    r2 = geodesic_distance_squared(g)
    r = math.sqrt(r2)
    psi = float(cutoff(r))
    if psi == 0.0:
        return 0.0
    coeff = a0_coefficient(g, nu)
    if order == 1:
        if r > near_identity_radius:
            raise UnsupportedOrderError(
                f"order-1 parametrix needs r(g) <= {near_identity_radius} (got {r:.3g})"
            )
        if nu.kind == "lambda_p" and n == 3:
            coeff += a1_identity_coefficient(nu.p, 1, R) * t
        elif nu.kind == "trivial" and n == 3:
            coeff += a1_identity_coefficient(0, 1, R) * t
        else:
            raise UnsupportedOrderError("a_1 at the identity is only tabulated for SL(3)")
    return (4 * math.pi * t) ** (-d / 2) * psi * math.exp(-r2 / (4 * t)) * coeff


def gaussian_bound_constant(nu: KRep, ts, gs, cutoff: Cutoff = Cutoff()) -> float:
    """Smallest ``C`` with ``|h_t(g)| <= C t^{-d/2} exp(-r^2/4t)`` on the sample grid."""
    best = 0.0
    for g in gs:
        r2 = geodesic_distance_squared(g)
        d = symspace_dim(np.asarray(g).shape[0])
        for t in ts:
            h = h_t_parametrix(t, g, nu, 0, cutoff)
            if h == 0.0:
                continue
            best = max(best, abs(h) * t ** (d / 2) * math.exp(r2 / (4 * t)))
    return best


# ---------------------------------------------------------------------------
# det(Id - T(u)) for GL(3)

_INVARIANT_Y1 = {
    (0, 1): np.diag([-0.5, -0.5, 1.0]),
    (0, 2): np.diag([-0.5, 1.0, -0.5]),
    (1, 2): np.diag([1.0, -0.5, -0.5]),
}


def rotation_part_of_unipotent(u: float, direction: tuple[int, int] = (0, 1)) -> np.ndarray:
    """``k(u)`` in ``exp(Y) k`` for the elementary unipotent ``Id + u e_ij``."""
    i, j = direction
    nmat = np.eye(3)
    nmat[i, j] = u
    return cartan_polar(nmat).k


def _s0_basis(direction: tuple[int, int]) -> np.ndarray:
    """Orthonormal basis (columns, in ``S`` coordinates) of the complement of ``Y_1``."""
    basis = symmetric_traceless_basis(3)
    Y1 = _INVARIANT_Y1[direction]
    y = np.array([np.trace(E @ Y1) for E in basis])
    y /= np.linalg.norm(y)
    # complete y to an orthonormal basis; the remaining columns span S_0
    q, _ = np.linalg.qr(np.column_stack([y, np.eye(5)]))
    return q[:, 1:5]


@dataclass(frozen=True)
class TBlock:
    T: np.ndarray
    invariance_defect: float


def t_matrix(u: float, direction: tuple[int, int] = (0, 1)) -> TBlock:
    """``T(u) = Ad(k(u))`` restricted to ``S_0 = Y_1^perp`` (4x4).

    ``invariance_defect`` is ``|Ad(k(u)) Y_1 - Y_1|``; a nonzero value flags a
    direction for which the splitting ``S = S_0 + R Y_1`` is not invariant.
    """
    if direction not in _INVARIANT_Y1:
        raise UsageError(f"direction must be one of {sorted(_INVARIANT_Y1)}")
    k = rotation_part_of_unipotent(u, direction)
    A = ad_p_matrix(k)
    Y1 = _INVARIANT_Y1[direction]
    defect = float(np.linalg.norm(k @ Y1 @ k.T - Y1))
    B = _s0_basis(direction)
    return TBlock(B.T @ A @ B, defect)


def det_id_minus_T(u: float, lam: float = 1.0, direction: tuple[int, int] = (0, 1)) -> float:
    """``f(lambda, u) = det(lambda Id - T(u))``."""
    T = t_matrix(u, direction).T
    return float(np.linalg.det(lam * np.eye(4) - T))


@dataclass
class SecondDerivativeReport:
    direction: tuple[int, int]
    steps: list[float]
    raw: list[float]
    extrapolated: float
    first_derivatives: dict[float, float]
    value_at_zero_defect: float
    invariance_defect: float

    @property
    def max_abs(self) -> float:
        return abs(self.extrapolated)


def second_derivative_check(
    direction: tuple[int, int] = (0, 1),
    steps: Sequence[float] = (1e-2, 5e-3, 2.5e-3, 1.25e-3, 1e-3, 5e-4, 2.5e-4, 1e-4),
    lambdas: Sequence[float] = (0.3, 1.0, 2.0, -1.5),
) -> SecondDerivativeReport:
    """Central-difference ``d^2/du^2 f(1, u)`` at 0 with a Richardson-extrapolated estimate.

    ``f(1, u) = O(u^4)``, so the raw central differences behave like
    ``c h^2``; eliminating that term between the two smallest steps gives the
    extrapolated value.  First derivatives ``d/du f(lambda, u)`` at 0 are
    reported for each sampled ``lambda``, together with the defect
    ``max |f(lambda, 0) - (lambda - 1)^4|``.
    """
    f0 = det_id_minus_T(0.0, 1.0, direction)
    raw = [(det_id_minus_T(h, 1.0, direction) - 2 * f0 + det_id_minus_T(-h, 1.0, direction)) / h ** 2 for h in steps]
    h1, h2 = steps[-2], steps[-1]
    d1, d2 = raw[-2], raw[-1]
    extrap = (h1 ** 2 * d2 - h2 ** 2 * d1) / (h1 ** 2 - h2 ** 2)
    hfirst = 1e-5
    firsts = {
        lam: (det_id_minus_T(hfirst, lam, direction) - det_id_minus_T(-hfirst, lam, direction)) / (2 * hfirst)
        for lam in lambdas
    }
    zero_defect = max(abs(det_id_minus_T(0.0, lam, direction) - (lam - 1) ** 4) for lam in lambdas)
    inv = max(t_matrix(h, direction).invariance_defect for h in steps)
    return SecondDerivativeReport(direction, list(steps), raw, extrap, firsts, zero_defect, inv)


# ---------------------------------------------------------------------------
# kernels for orbital integrals


class RadialKernel:
    """A kernel depending on ``g`` only through ``r(g)^2``: ``F(r^2, t)``."""

    d: int
    #: Number of output components (1 for scalar kernels).
    components: int = 1

    def profile(self, r2, t: float):
        raise NotImplementedError

    def evaluate(self, G, t: float) -> np.ndarray:
        """Values on a stack of matrices, shape ``(N,)`` or ``(N, components)``."""
        return self.profile(_kernels.r2_batch(G), t)

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass
class GaussianKernel(RadialKernel):
    """``(4 pi t)^{-d/2} exp(-r^2/4t)`` without cutoff."""

    d: int = 5

    def profile(self, r2, t: float):
        return (4 * math.pi * t) ** (-self.d / 2) * np.exp(-np.asarray(r2) / (4 * t))

    def to_json(self) -> dict:
        return {"type": "gaussian", "d": self.d}


@dataclass
class TableKernel(RadialKernel):
    """Tabulated profile in the scaled variable ``u = r^2/(4t)``.

    ``F(r^2, t) = (4 pi t)^{-d/2} e^{-u} h(u)`` with ``h = values * e^{u}``
    interpolated linearly on ``r2_grid`` (the grid of ``u`` values) and held
    constant outside it, so ``F`` keeps the Gaussian decay of the tail.
    """

    r2_grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    d: int = 5

    def __post_init__(self):
        self.r2_grid = np.asarray(self.r2_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.r2_grid.ndim != 1 or self.r2_grid.shape != self.values.shape or len(self.r2_grid) < 2:
            raise UsageError("table kernel needs matching 1-d grids with at least two points")
        if np.any(np.diff(self.r2_grid) <= 0):
            raise UsageError("table kernel grid must be strictly increasing")
        h = self.values * np.exp(self.r2_grid)
        self._h = interp1d(self.r2_grid, h, bounds_error=False, fill_value=(h[0], h[-1]), assume_sorted=True)

    def profile(self, r2, t: float):
        u = np.asarray(r2) / (4 * t)
        return (4 * math.pi * t) ** (-self.d / 2) * np.exp(-u) * self._h(u)

    def to_json(self) -> dict:
        return {"type": "table", "r2_grid": self.r2_grid.tolist(), "values": self.values.tolist(), "d": self.d}


@dataclass
class ParametrixKernel(RadialKernel):
    """Traced parametrix for ``nu_p``, ``p in ps``, on ``SL(3)``; vector valued.

    With ``order=1`` the second coefficient is frozen at its identity value
    ``a_1(1)`` on the whole support of the cutoff.
    """

    ps: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    order: int = 0
    cutoff: Cutoff = field(default_factory=Cutoff)
    R: float | None = None
    d: int = 5

    def __post_init__(self):
        if self.order not in (0, 1):
            raise UnsupportedOrderError(f"parametrix order {self.order} is not available")
        self.ps = tuple(int(p) for p in self.ps)
        for p in self.ps:
            if not 0 <= p <= 5:
                raise UsageError(f"p={p} outside 0..5")
        self.components = len(self.ps)

    def evaluate(self, G, t: float) -> np.ndarray:
        G = np.asarray(G, dtype=float)
        if G.ndim == 2:
            G = G[None]
        if G.shape[1] != 3:
            raise UsageError("the parametrix kernel is implemented for SL(3)")
        r2, yeig, K = _kernels.polar_batch(G)
        detk = np.sign(np.linalg.det(K))
        trk = np.einsum("nii->n", K) * detk
        chars = so3_nu_traces_from_trace(trk)[:, list(self.ps)]
        a0 = chars / np.sqrt(exp_jacobian_from_eigenvalues(yeig))[:, None]
        if self.order == 1:
            a1 = np.array([a1_identity_coefficient(p, 1, self.R) for p in self.ps])
            a0 = a0 + t * a1[None, :]
        weight = (4 * math.pi * t) ** (-self.d / 2) * self.cutoff(np.sqrt(r2)) * np.exp(-r2 / (4 * t))
        return a0 * weight[:, None]

    def profile(self, r2, t):  # pragma: no cover - not radial
        raise UsageError("the parametrix kernel is not a function of r^2 alone")

    def to_json(self) -> dict:
        return {
            "type": "parametrix",
            "ps": list(self.ps),
            "order": self.order,
            "cutoff": [self.cutoff.a, self.cutoff.b],
        }


def kernel_from_json(data: dict) -> RadialKernel:
    kind = data.get("type")
    if kind == "gaussian":
        return GaussianKernel(int(data.get("d", 5)))
    if kind == "table":
        return TableKernel(np.asarray(data["r2_grid"]), np.asarray(data["values"]), int(data.get("d", 5)))
    if kind == "parametrix":
        a, b = data.get("cutoff", [0.5, 1.0])
        return ParametrixKernel(tuple(data.get("ps", range(6))), int(data.get("order", 0)), Cutoff(a, b))
    raise UsageError(f"unknown kernel type {kind!r}")
