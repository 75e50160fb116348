"""Small-time expansions ``t^{-(d-k)/2} sum_j sum_i c_ij t^{j/2} (log t)^i``.

The exponent lattice is fixed by ``d`` (dimension of the symmetric space) and
``k`` (dimension of the unipotent integration domain); only the coefficients
are fitted.  Coefficients are also available directly as Gaussian-log
integrals (:func:`coeff_cij`) and, for the ``log t`` coefficient of the
``GL(3)`` subregular class, assembled from heat-coefficient data
(:func:`c2_assembly`).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .errors import IllConditionedError, UsageError
from .quadrature import LogFactor, LogGaussIntegrand, Polynomial, gaussian_moment_1d, integrate_signed

ZERO_THRESHOLD = 10.0
CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class TraceSamples:
    """Samples ``(t, value)`` of a small-time trace, ``t > 0`` strictly increasing."""

    ts: np.ndarray
    values: np.ndarray
    tag: str = ""

    def __post_init__(self):
        ts = np.asarray(self.ts, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "values", vals)
        if ts.ndim != 1 or vals.shape != ts.shape:
            raise UsageError("trace samples need matching 1-d arrays")
        if np.any(ts <= 0):
            raise UsageError("sample times must be positive")
        if np.any(np.diff(ts) <= 0):
            raise UsageError("sample times must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise UsageError("sample values must be finite")

    @classmethod
    def from_rows(cls, rows: Sequence[tuple[float, float]], tag: str = "") -> "TraceSamples":
        rows = sorted((float(t), float(np.atleast_1d(v)[0])) for t, v in rows)
        return cls(np.array([r[0] for r in rows]), np.array([r[1] for r in rows]), tag)

    @property
    def decades(self) -> float:
        return float(math.log10(self.ts[-1] / self.ts[0]))


def geometric_grid(lo: float, hi: float, count: int) -> np.ndarray:
    if not (0 < lo < hi) or count < 2:
        raise UsageError("geometric grid needs 0 < lo < hi and count >= 2")
    return np.geomspace(lo, hi, count)


@dataclass(frozen=True)
class ExpansionTerm:
    j: int
    log_power: int
    exponent: float
    coefficient: float
    stderr: float
    zero_consistent: bool

    def to_json(self) -> dict:
        return {
            "j": self.j,
            "log_power": self.log_power,
            "exponent": self.exponent,
            "coefficient": self.coefficient,
            "stderr": self.stderr,
            "zero_consistent": self.zero_consistent,
        }


@dataclass
class AsymptoticExpansion:
    d: int
    k: int
    terms: list[ExpansionTerm]
    residual: float = 0.0
    condition: float = 1.0
    notes: list[str] = field(default_factory=list)

    @property
    def base_exponent(self) -> float:
        return -(self.d - self.k) / 2

    def coefficient(self, j: int, log_power: int) -> ExpansionTerm:
        for term in self.terms:
            if term.j == j and term.log_power == log_power:
                return term
        raise KeyError((j, log_power))

    def significant(self) -> list[ExpansionTerm]:
        return [term for term in self.terms if not term.zero_consistent]

    @property
    def leading_exponent(self) -> float:
        sig = self.significant()
        if not sig:
            raise UsageError("no coefficient of the expansion is significant")
        return min(term.exponent for term in sig)

    @property
    def log_degree(self) -> int:
        return max((term.log_power for term in self.significant()), default=0)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for term in self.terms:
            out = out + term.coefficient * t ** term.exponent * np.log(t) ** term.log_power
        return out

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "k": self.k,
            "terms": [term.to_json() for term in self.terms],
            "residual": self.residual,
            "condition": self.condition,
            "notes": list(self.notes),
        }

    @classmethod
    def from_json(cls, data: dict) -> "AsymptoticExpansion":
        try:
            terms = [
                ExpansionTerm(int(t["j"]), int(t["log_power"]), float(t["exponent"]), float(t["coefficient"]),
                              float(t.get("stderr", 0.0)), bool(t.get("zero_consistent", False)))
                for t in data["terms"]
            ]
            return cls(int(data["d"]), int(data["k"]), terms, float(data.get("residual", 0.0)),
                       float(data.get("condition", 1.0)), list(data.get("notes", [])))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"invalid expansion JSON: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def expansion_from_coefficients(d: int, k: int, coeffs: dict[tuple[int, int], float]) -> AsymptoticExpansion:
    """Exact expansion with ``coeffs[(j, i)]`` multiplying ``t^{-(d-k)/2 + j/2} (log t)^i``."""
    terms = [
        ExpansionTerm(j, i, -(d - k) / 2 + j / 2, float(c), 0.0, c == 0)
        for (j, i), c in sorted(coeffs.items())
    ]
    return AsymptoticExpansion(d, k, terms)


def synthesize(expansion: AsymptoticExpansion, ts) -> TraceSamples:
    ts = np.asarray(ts, dtype=float)
    return TraceSamples(ts, expansion(ts), "synthetic")


def _basis(ts: np.ndarray, d: int, k: int, max_order: int, max_log_power: int):
    labels = [(j, i) for j in range(max_order + 1) for i in range(max_log_power + 1)]
    base = -(d - k) / 2
    logt = np.log(ts)
    A = np.stack([ts ** (base + j / 2) * logt ** i for j, i in labels], axis=1)
    return labels, A


@dataclass(frozen=True)
class _LinearFit:
    labels: list[tuple[int, int]]
    coef: np.ndarray
    stderr: np.ndarray
    residual: float
    condition: float


def _weighted_fit(samples: TraceSamples, d: int, k: int, max_order: int, max_log_power: int,
                  condition_limit: float) -> _LinearFit:
    labels, A = _basis(samples.ts, d, k, max_order, max_log_power)
    if len(labels) > len(samples.ts) // 2:
        raise UsageError(f"{len(labels)} basis functions need at least {2 * len(labels)} samples")
    y = samples.values
    w = 1.0 / np.maximum(np.abs(y), np.finfo(float).tiny)
    Aw = A * w[:, None]
    yw = y * w
    scale = np.linalg.norm(Aw, axis=0)
    if np.any(scale == 0):
        raise IllConditionedError("a basis function vanishes on the grid")
    As = Aw / scale
    cond = float(np.linalg.cond(As))
    if not np.isfinite(cond) or cond > condition_limit:
        lo = samples.ts[0]
        raise IllConditionedError(
            f"basis condition number {cond:.3g} exceeds {condition_limit:.1g}; extend the grid below t={lo:.3g} "
            f"(for example to t={lo / 100:.3g}) or reduce max_order/max_log_power"
        )
    U, sv, Vt = np.linalg.svd(As, full_matrices=False)
    sol = Vt.T @ ((U.T @ yw) / sv)
    resid = yw - As @ sol
    dof = max(len(y) - len(labels), 1)
    sigma2 = float(resid @ resid) / dof
    # sigma^2 (A^T A)^{-1} = sigma^2 V S^{-2} V^T in the equilibrated columns
    stderr = np.sqrt(sigma2 * np.sum((Vt.T / sv) ** 2, axis=1)) / scale
    return _LinearFit(labels, sol / scale, stderr, float(np.max(np.abs(resid))), cond)


def fit_expansion(
    samples: TraceSamples,
    d: int,
    k: int,
    max_order: int,
    max_log_power: int,
    group_rank: int | None = None,
    zero_threshold: float = ZERO_THRESHOLD,
    condition_limit: float = CONDITION_LIMIT,
    min_decades: float = 3.0,
    truncation_check: bool = True,
) -> AsymptoticExpansion:
    """Weighted least squares on ``t^{-(d-k)/2 + j/2} (log t)^i``, ``j <= max_order``, ``i <= max_log_power``.

    Rows are weighted by ``1/|value|`` (relative residuals).  The condition
    number is that of the column-equilibrated weighted design matrix.  The
    standard error of a coefficient combines the statistical error (residual
    variance times ``(A^T W A)^{-1}``) with, when ``truncation_check`` is set,
    the shift of the coefficient between this fit and the fit of the adjacent
    order (``max_order + 1`` when the grid supports it, else ``max_order - 1``,
    against which the top-order terms are compared with 0).  A coefficient is zero-consistent when ``|c| < zero_threshold * stderr``.
    """
    if k < 0 or d < 0 or k > d:
        raise UsageError("need 0 <= k <= d")
    if max_order < 0 or max_log_power < 0:
        raise UsageError("orders must be non-negative")
    if group_rank is not None and max_log_power > group_rank - 1:
        raise UsageError(f"log powers are bounded by {group_rank - 1} for rank {group_rank}")
    if samples.decades < min_decades - 1e-9:
        raise UsageError(f"the t-grid spans {samples.decades:.2f} decades; at least {min_decades:g} are needed")
    fit = _weighted_fit(samples, d, k, max_order, max_log_power, condition_limit)
    stderr = fit.stderr.copy()
    notes = []
    if truncation_check:
        other = None
        for order in (max_order + 1, max_order - 1):
            if order < 0:
                continue
            try:
                other = _weighted_fit(samples, d, k, order, max_log_power, condition_limit)
                break
            except (UsageError, IllConditionedError):
                continue
        if other is None:
            notes.append("truncation check skipped: no adjacent order fits the grid")
        else:
            shifts = dict(zip(other.labels, other.coef))
            for q, lab in enumerate(fit.labels):
                # a term absent from the comparison fit is compared with 0
                stderr[q] = math.hypot(stderr[q], fit.coef[q] - shifts.get(lab, 0.0))
            notes.append(f"truncation check against order {order}")
    base = -(d - k) / 2
    terms = [
        ExpansionTerm(j, i, base + j / 2, float(c), float(s), bool(abs(c) < zero_threshold * s))
        for (j, i), c, s in zip(fit.labels, fit.coef, stderr)
    ]
    return AsymptoticExpansion(d, k, terms, fit.residual, fit.condition, notes)


@dataclass(frozen=True)
class ExponentEstimate:
    exponent: float
    residual: float


def effective_exponent(samples: TraceSamples, log_power: int, corrections: int = 2,
                       bracket: tuple[float, float] = (-4.0, 2.0)) -> ExponentEstimate:
    """Free leading exponent ``alpha`` of ``t^alpha sum_{j<=corrections} t^{j/2} P_j(log t)``.

    ``P_j`` has degree ``log_power``.  The linear coefficients are projected
    out and ``alpha`` minimises the relative residual.  This is a diagnostic
    for the lattice choice and never feeds :func:`fit_expansion`.
    """
    ts, y = samples.ts, samples.values
    logt = np.log(ts)
    w = 1.0 / np.maximum(np.abs(y), np.finfo(float).tiny)

    def rss(alpha):
        A = np.stack([ts ** (alpha + j / 2) * logt ** i for j in range(corrections + 1) for i in range(log_power + 1)],
                     axis=1) * w[:, None]
        sol, *_ = np.linalg.lstsq(A, y * w, rcond=None)
        r = A @ sol - y * w
        return float(r @ r)

    grid = np.linspace(bracket[0], bracket[1], 121)
    vals = [rss(a) for a in grid]
    q = int(np.argmin(vals))
    lo, hi = grid[max(q - 1, 0)], grid[min(q + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(rss, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    return ExponentEstimate(float(res.x), math.sqrt(float(res.fun) / len(ts)))


# ---------------------------------------------------------------------------
# coefficients as Gaussian-log integrals


def gaussian_polynomial_moment(p: Polynomial, a: float = 1.0) -> float:
    """``int_{R^k} exp(-a |x|^2) p(x) dx`` in closed form (products of ``Gamma`` values)."""
    total = 0.0
    for exps, c in p.terms:
        total += c * math.prod(gaussian_moment_1d(e, a) for e in exps)
    return total


def coeff_cij(p: Polynomial, log_factors: Sequence[LogFactor] = (), mode: str = "log", a: float = 1.0,
              tol: float | None = None) -> float:
    """``int exp(-a|x|^2) p(x) prod log|p_l(x)| dx`` (``mode="log"``) or ``int exp(-a|x|^2) p(x) dx`` (``mode="top"``).

    ``mode="top"`` is the coefficient of the highest power of ``log t`` at
    a given ``j``, where no logarithm survives; it is evaluated through the
    moment formula.  ``p`` and every ``p_l`` must be homogeneous.
    """
    if not p.is_zero and not p.is_homogeneous():
        raise UsageError("p must be homogeneous")
    if mode == "top":
        return 0.0 if p.is_zero else gaussian_polynomial_moment(p, a)
    if mode != "log":
        raise UsageError(f"unknown mode {mode!r}")
    if p.is_zero:
        return 0.0
    res = integrate_signed(LogGaussIntegrand(p.dim, a, p, tuple(log_factors)), tol=tol)
    return float(res.value)


def _monomials(dim: int, degree: int) -> list[tuple[int, ...]]:
    return [e for e in itertools.product(range(degree + 1), repeat=dim) if sum(e) == degree]


def taylor_part(fn: Callable[[np.ndarray], np.ndarray], dim: int, degree: int, radius: float = 0.05,
                fit_degree: int | None = None, n_points: int = 600, seed: int = 0) -> Polynomial:
    """Homogeneous degree-``degree`` Taylor part of a smooth ``fn`` at 0.

    ``fn`` is sampled on ``n_points`` points of the ball of ``radius`` and a
    full polynomial of ``fit_degree`` (default ``degree + 2``) is fitted; the
    degree-``degree`` monomials of the fit are returned.
    """
    fit_degree = degree + 2 if fit_degree is None else fit_degree
    rng = np.random.default_rng(seed)
    X = rng.uniform(-radius, radius, (n_points, dim))
    exps = [e for m in range(fit_degree + 1) for e in _monomials(dim, m)]
    # monomials are scaled by radius^|e| for conditioning
    V = np.stack([np.prod((X / radius) ** np.array(e), axis=1) for e in exps], axis=1)
    coef, *_ = np.linalg.lstsq(V, np.asarray(fn(X), dtype=float), rcond=None)
    out = {e: c / radius ** sum(e) for e, c in zip(exps, coef) if sum(e) == degree}
    return Polynomial.from_dict(out, dim)


def polynomial_product(p: Polynomial, q: Polynomial) -> Polynomial:
    out: dict[tuple[int, ...], float] = {}
    for e1, c1 in p.terms:
        for e2, c2 in q.terms:
            e = tuple(a + b for a, b in zip(e1, e2))
            out[e] = out.get(e, 0.0) + c1 * c2
    return Polynomial.from_dict(out, p.dim)


def polynomial_scale(p: Polynomial, c: float) -> Polynomial:
    return Polynomial.from_dict({e: c * v for e, v in p.terms}, p.dim)


def polynomial_sum(*ps: Polynomial) -> Polynomial:
    out: dict[tuple[int, ...], float] = {}
    for p in ps:
        for e, c in p.terms:
            out[e] = out.get(e, 0.0) + c
    return Polynomial.from_dict(out, ps[0].dim)


def prune(p: Polynomial, tol: float) -> Polynomial:
    """Drop coefficients below ``tol`` in absolute value."""
    return Polynomial.from_dict({e: c for e, c in p.terms if abs(c) > tol}, p.dim)


# ---------------------------------------------------------------------------
# the log t coefficient of the GL(3) subregular class


@dataclass(frozen=True)
class C2Inputs:
    """Data entering the ``t^0 log t`` coefficient of ``t`` times the subregular integral.

    ``p1`` and ``p2`` are the ``t^{1/2}`` and ``t`` polynomials of the
    expansion of ``exp(-psi(t^{1/2} x)/t)``; ``a0_grad`` and ``a0_hess`` are
    derivatives of ``x -> a_0(n(x))`` at 0.
    """

    a0_at_one: float
    a1_at_one: float
    p1: Polynomial
    p2: Polynomial
    a0_grad: np.ndarray
    a0_hess: np.ndarray
    a: float = 1.0


@dataclass(frozen=True)
class C2Result:
    full: float
    reduced: float
    terms: dict


def c2_assembly(data: C2Inputs) -> C2Result:
    """All contributions to the coefficient and the form left after parity elimination.

    ``full`` keeps the gradient term ``sum_i d_i a_0 int x_i p1`` and the mixed
    second derivatives; ``reduced`` keeps only ``a_0(1) int p2``,
    ``a_1(1) int 1`` and the pure second derivatives.  Every integral is a
    Gaussian moment.
    """
    a = data.a
    dim = data.p2.dim
    grad = np.asarray(data.a0_grad, dtype=float)
    hess = np.asarray(data.a0_hess, dtype=float)
    if grad.shape != (dim,) or hess.shape != (dim, dim):
        raise UsageError("derivative data do not match the dimension")
    one = gaussian_polynomial_moment(Polynomial.constant(1.0, dim), a)

    def coordinate(i):
        e = [0] * dim
        e[i] = 1
        return Polynomial.monomial(tuple(e))

    p2_term = data.a0_at_one * gaussian_polynomial_moment(data.p2, a)
    a1_term = data.a1_at_one * one
    grad_term = 0.0
    if not data.p1.is_zero:
        grad_term = sum(grad[i] * gaussian_polynomial_moment(polynomial_product(coordinate(i), data.p1), a)
                        for i in range(dim))
    diag_term = sum(hess[i, i] * gaussian_moment_1d(2, a) * gaussian_moment_1d(0, a) ** (dim - 1) for i in range(dim))
    mixed_term = sum(
        hess[i, j] * gaussian_polynomial_moment(polynomial_product(coordinate(i), coordinate(j)), a)
        for i in range(dim) for j in range(dim) if i != j
    )
    terms = {"a0_p2": p2_term, "a1": a1_term, "grad_p1": grad_term, "hess_diag": diag_term, "hess_mixed": mixed_term}
    reduced = p2_term + a1_term + diag_term
    return C2Result(reduced + grad_term + mixed_term, reduced, terms)


def exponential_expansion_polynomials(r2_cubic: Polynomial, r2_quartic: Polynomial, scale: float = 0.25):
    """``p_1, p_2`` with ``exp(-scale (t^{1/2} q_3 + t q_4)) = 1 + t^{1/2} p_1 + t p_2 + O(t^{3/2})``.

    ``q_3``, ``q_4`` are the cubic and quartic Taylor parts of ``r^2``.
    """
    p1 = polynomial_scale(r2_cubic, -scale) if not r2_cubic.is_zero else r2_cubic
    parts = []
    if not r2_quartic.is_zero:
        parts.append(polynomial_scale(r2_quartic, -scale))
    if not r2_cubic.is_zero:
        parts.append(polynomial_scale(polynomial_product(r2_cubic, r2_cubic), scale * scale / 2))
    p2 = polynomial_sum(*parts) if parts else r2_quartic
    return p1, p2
