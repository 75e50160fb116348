"""Adaptive quadrature and Monte Carlo oracles for Gaussian integrals with log factors.

The integrals have the form

    int_{R^k} exp(-a |x|^2) p(x) prod_l L_l(x) dx,

with ``L_l = |log|p_l(x)||^{m_l}`` (:func:`integrate`) or
``L_l = (log|p_l(x)|)^{m_l}`` (:func:`integrate_signed`) for homogeneous
polynomials ``p_l``.  Such integrals converge because the logarithmic
singularities on the zero sets of the ``p_l`` are integrable.

Deterministic engine
--------------------
The domain is truncated to the box ``[-R, R]^k`` with ``R`` chosen from
the Gaussian tail bound, then split into its ``2^k`` orthants so that the
coordinate hyperplanes (where most of the relevant log factors vanish)
become region faces.  Regions are refined adaptively: Gauss-Kronrod
``G7/K15`` in one dimension and the Genz-Malik degree-7/5 embedded rule in
two to four dimensions, splitting along the axis with the largest fourth
difference.  Quadrature nodes never touch region faces, so singularities
on faces are resolved by subdivision alone.  Results are reduced in
region-id order, which makes them bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import UsageError

Integrand = Callable[[np.ndarray], np.ndarray]

DEFAULT_TOL = {1: 1e-8, 2: 1e-8, 3: 1e-6, 4: 1e-6}


# ---------------------------------------------------------------------------
# polynomials and integrands


@dataclass(frozen=True)
class Polynomial:
    """Sparse multivariate polynomial ``sum_k c_k x^{e_k}``."""

    terms: tuple[tuple[tuple[int, ...], float], ...]
    dim: int

    @classmethod
    def from_dict(cls, coeffs: dict, dim: int | None = None) -> "Polynomial":
        items = [(tuple(int(e) for e in exps), float(c)) for exps, c in coeffs.items() if c != 0]
        if dim is None:
            if not items:
                raise UsageError("cannot infer the dimension of the zero polynomial")
            dim = len(items[0][0])
        for exps, _ in items:
            if len(exps) != dim or min(exps, default=0) < 0:
                raise UsageError(f"bad exponent tuple {exps} for dimension {dim}")
        return cls(tuple(sorted(items)), dim)

    @classmethod
    def constant(cls, c: float, dim: int) -> "Polynomial":
        return cls.from_dict({(0,) * dim: c}, dim)

    @classmethod
    def monomial(cls, exps: Sequence[int], c: float = 1.0) -> "Polynomial":
        return cls.from_dict({tuple(exps): c})

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def degree(self) -> int:
        return max((sum(e) for e, _ in self.terms), default=0)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.is_zero:
            return np.zeros(X.shape[0])
        exps = np.array([e for e, _ in self.terms], dtype=np.int64)
        coeffs = np.array([c for _, c in self.terms])
        return _kernels.monomials(X, exps, coeffs)

    def is_homogeneous(self, degree: int | None = None, rng: np.random.Generator | None = None) -> bool:
        """Structural check plus the numerical test ``p(sx) = s^kappa p(x)`` on random samples."""
        if self.is_zero:
            return False
        degs = {sum(e) for e, _ in self.terms}
        if len(degs) != 1:
            return False
        kappa = degs.pop()
        if degree is not None and kappa != degree:
            return False
        rng = rng or np.random.default_rng(12345)
        X = rng.standard_normal((16, self.dim))
        for s in (0.5, 1.7, 3.0):
            lhs, rhs = self(s * X), s ** kappa * self(X)
            if not np.allclose(lhs, rhs, rtol=1e-9, atol=1e-12):
                return False
        return True

    def to_json(self) -> list[dict]:
        return [{"exps": list(e), "coeff": c} for e, c in self.terms]

    @classmethod
    def from_json(cls, data: Iterable[dict], dim: int) -> "Polynomial":
        return cls.from_dict({tuple(t["exps"]): float(t["coeff"]) for t in data}, dim)


@dataclass(frozen=True)
class LogFactor:
    """``log|poly|`` raised to ``power``; ``poly`` must be homogeneous of ``degree``."""

    poly: Polynomial
    degree: int
    power: int = 1


@dataclass(frozen=True)
class LogGaussIntegrand:
    dim: int
    a: float
    poly: Polynomial
    logs: tuple[LogFactor, ...] = ()

    def __post_init__(self):
        if not 1 <= self.dim:
            raise UsageError("dimension must be positive")
        if not self.a > 0:
            raise UsageError("Gaussian scale a must be positive")
        object.__setattr__(self, "logs", tuple(self.logs))
        for lf in (self.poly, *[lf.poly for lf in self.logs]):
            if not lf.is_zero and lf.dim != self.dim:
                raise UsageError("polynomial dimension does not match the integrand")

    def values(self, X: np.ndarray, signed: bool) -> np.ndarray:
        """Integrand values at the rows of ``X``."""
        out = np.exp(-self.a * np.sum(X * X, axis=1)) * self.poly(X)
        for lf in self.logs:
            lg = np.log(np.maximum(np.abs(lf.poly(X)), 1e-300))
            out = out * (lg ** lf.power if signed else np.abs(lg) ** lf.power)
        return out

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "a": self.a,
            "poly": self.poly.to_json(),
            "logs": [{"terms": lf.poly.to_json(), "degree": lf.degree, "power": lf.power} for lf in self.logs],
        }

    @classmethod
    def from_json(cls, data: dict) -> "LogGaussIntegrand":
        dim = int(data["dim"])
        poly = Polynomial.from_json(data.get("poly", [{"exps": [0] * dim, "coeff": 1.0}]), dim)
        logs = tuple(
            LogFactor(Polynomial.from_json(lf["terms"], dim), int(lf["degree"]), int(lf.get("power", 1)))
            for lf in data.get("logs", [])
        )
        return cls(dim, float(data["a"]), poly, logs)


def finiteness_guard(I: LogGaussIntegrand) -> bool:
    """True iff every log factor is homogeneous of its declared degree and not identically zero."""
    return all(lf.poly.is_homogeneous(lf.degree) for lf in I.logs)


# ---------------------------------------------------------------------------
# cubature rules

_XGK = np.array(
    [
        0.991455371120812639206854697526329,
        0.949107912342758524526189684047851,
        0.864864423359769072789712788640926,
        0.741531185599394439863864773280788,
        0.586087235467691130294144845693013,
        0.405845151377397166906606412076961,
        0.207784955007898467600689403773245,
        0.000000000000000000000000000000000,
    ]
)
_WGK = np.array(
    [
        0.022935322010529224963732008058970,
        0.063092092629978553290700663189204,
        0.104790010322250183839876322541518,
        0.140653259715525918745189590510238,
        0.169004726639267902826583426598550,
        0.190350578064785409913256402421014,
        0.204432940075298892414161999234649,
        0.209482141084727828012999174891714,
    ]
)
_WG = np.array(
    [
        0.129484966168869693270611432679082,
        0.279705391489276667901467771423780,
        0.381830050505118944950369775488975,
        0.417959183673469387755102040816327,
    ]
)


def _kronrod_nodes() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.concatenate([-_XGK[:-1], _XGK[::-1]])
    wk = np.concatenate([_WGK[:-1], _WGK[::-1]])
    wg = np.zeros(15)
    # Gauss nodes are the odd-indexed Kronrod abscissae (1,3,5 from the end) and 0
    gauss_pos = [1, 3, 5]
    for i, p in enumerate(gauss_pos):
        wg[p] = _WG[i]
        wg[14 - p] = _WG[i]
    wg[7] = _WG[3]
    return x, wk, wg


_GK_X, _GK_WK, _GK_WG = _kronrod_nodes()


class _GenzMalik:
    """Degree-7 rule with embedded degree-5 rule on ``[-1, 1]^d`` (weights relative to volume)."""

    def __init__(self, d: int):
        if not 2 <= d <= 4:
            raise UsageError("the Genz-Malik rule is used for dimensions 2..4")
        self.d = d
        l2, l3, l4, l5 = math.sqrt(9 / 70), math.sqrt(9 / 10), math.sqrt(9 / 10), math.sqrt(9 / 19)
        nodes, w7, w5 = [np.zeros(d)], [(12824 - 9120 * d + 400 * d * d) / 19683], [(729 - 950 * d + 50 * d * d) / 729]
        self.axis2, self.axis3 = [], []
        for i in range(d):
            for sgn in (1, -1):
                e = np.zeros(d)
                e[i] = sgn * l2
                self.axis2.append(len(nodes))
                nodes.append(e)
                w7.append(980 / 6561)
                w5.append(245 / 486)
        for i in range(d):
            for sgn in (1, -1):
                e = np.zeros(d)
                e[i] = sgn * l3
                self.axis3.append(len(nodes))
                nodes.append(e)
                w7.append((1820 - 400 * d) / 19683)
                w5.append((265 - 100 * d) / 1458)
        for i in range(d):
            for j in range(i + 1, d):
                for si in (1, -1):
                    for sj in (1, -1):
                        e = np.zeros(d)
                        e[i], e[j] = si * l4, sj * l4
                        nodes.append(e)
                        w7.append(200 / 19683)
                        w5.append(25 / 729)
        for signs in np.ndindex(*(2,) * d):
            nodes.append(np.array([l5 if s == 0 else -l5 for s in signs]))
            w7.append(6859 / 19683 / 2 ** d)
            w5.append(0.0)
        self.nodes = np.array(nodes)
        self.w7 = np.array(w7)
        self.w5 = np.array(w5)
        self.ratio = (l2 / l3) ** 2


# ---------------------------------------------------------------------------
# adaptive engine


@dataclass
class QuadResult:
    value: float | np.ndarray
    error_estimate: float
    regions_used: int
    singular_regions: int
    converged: bool = True
    evaluations: int = 0
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        v = self.value.tolist() if isinstance(self.value, np.ndarray) else self.value
        return {
            "value": v,
            "error_estimate": self.error_estimate,
            "regions_used": self.regions_used,
            "singular_regions": self.singular_regions,
            "converged": self.converged,
            "evaluations": self.evaluations,
        }


def _evaluate_regions(f: Integrand, centers: np.ndarray, halfw: np.ndarray, rule, ncomp: int):
    """Integrals, error estimates and split axes for a batch of boxes."""
    nreg, d = centers.shape
    if d == 1:
        pts = centers[:, None, :] + halfw[:, None, :] * _GK_X[None, :, None]
        vals = np.asarray(f(pts.reshape(-1, 1)), dtype=float).reshape(nreg, 15, ncomp)
        vol = halfw[:, 0]
        ik = np.einsum("rnc,n->rc", vals, _GK_WK) * vol[:, None]
        ig = np.einsum("rnc,n->rc", vals, _GK_WG) * vol[:, None]
        err = np.max(np.abs(ik - ig), axis=1)
        return ik, err, np.zeros(nreg, dtype=int)
    pts = centers[:, None, :] + halfw[:, None, :] * rule.nodes[None, :, :]
    vals = np.asarray(f(pts.reshape(-1, d)), dtype=float).reshape(nreg, len(rule.nodes), ncomp)
    vol = np.prod(2 * halfw, axis=1)
    i7 = np.einsum("rnc,n->rc", vals, rule.w7) * vol[:, None]
    i5 = np.einsum("rnc,n->rc", vals, rule.w5) * vol[:, None]
    err = np.max(np.abs(i7 - i5), axis=1)
    center_val = vals[:, 0, :]
    a2 = np.array(rule.axis2).reshape(d, 2)
    a3 = np.array(rule.axis3).reshape(d, 2)
    diff2 = np.abs(vals[:, a2[:, 0], :] + vals[:, a2[:, 1], :] - 2 * center_val[:, None, :])
    diff3 = np.abs(vals[:, a3[:, 0], :] + vals[:, a3[:, 1], :] - 2 * center_val[:, None, :])
    fourth = np.max(np.abs(diff2 - rule.ratio * diff3), axis=2)
    # ties (e.g. symmetric integrands) go to the widest axis
    fourth = fourth + 1e-14 * (np.abs(fourth).max(axis=1, keepdims=True) + 1e-300) * halfw / halfw.max(axis=1, keepdims=True)
    return i7, err, np.argmax(fourth, axis=1)


def adaptive_integrate(
    f: Integrand,
    lo: Sequence[float],
    hi: Sequence[float],
    tol: float = 1e-8,
    rel_tol: float = 0.0,
    max_regions: int = 400_000,
    components: int = 1,
    initial_split: bool = False,
    singular: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
) -> QuadResult:
    """Adaptive cubature of ``f`` over the box ``[lo, hi]``.

    ``f`` maps an ``(N, d)`` array of points to ``(N,)`` (or ``(N, components)``)
    values.  With ``initial_split`` the box is first cut along every
    coordinate hyperplane through the origin that crosses it.  ``singular``,
    if given, maps region centres and half-widths to a boolean mask of regions
    whose closure meets a singular set (used for reporting only).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = lo.size
    if d < 1 or d > 4:
        raise UsageError("the adaptive engine supports dimensions 1..4")
    if np.any(hi <= lo):
        raise UsageError("empty integration box")
    ncomp = int(components)

    def fv(X):
        v = np.asarray(f(X), dtype=float)
        return v.reshape(X.shape[0], ncomp)

    rule = _GenzMalik(d) if d >= 2 else None
    # initial regions
    cuts = []
    for i in range(d):
        c = [lo[i], hi[i]]
        if initial_split and lo[i] < 0 < hi[i]:
            c = [lo[i], 0.0, hi[i]]
        cuts.append(c)
    boxes = []
    for idx in np.ndindex(*[len(c) - 1 for c in cuts]):
        blo = np.array([cuts[i][k] for i, k in enumerate(idx)])
        bhi = np.array([cuts[i][k + 1] for i, k in enumerate(idx)])
        boxes.append((blo, bhi))
    centers = np.array([(a + b) / 2 for a, b in boxes])
    halfw = np.array([(b - a) / 2 for a, b in boxes])
    ids = np.arange(len(boxes))
    next_id = len(boxes)
    vals, errs, axes = _evaluate_regions(fv, centers, halfw, rule, ncomp)
    nodes_per = 15 if d == 1 else len(rule.nodes)
    evaluations = len(boxes) * nodes_per
    converged = True
    while True:
        total = vals.sum(axis=0)
        err_total = float(errs.sum())
        target = max(tol, rel_tol * float(np.max(np.abs(total))))
        if err_total <= target:
            break
        if len(ids) >= max_regions:
            converged = False
            break
        emax = errs.max()
        sel = np.nonzero(errs >= 0.1 * emax)[0]
        if len(sel) > 2000:
            sel = sel[np.argsort(-errs[sel], kind="stable")[:2000]]
        sel = np.sort(sel)
        c, h, ax = centers[sel], halfw[sel].copy(), axes[sel]
        rows = np.arange(len(sel))
        h[rows, ax] /= 2
        shift = np.zeros_like(c)
        shift[rows, ax] = h[rows, ax]
        c_new = np.concatenate([c - shift, c + shift])
        h_new = np.concatenate([h, h])
        v_new, e_new, a_new = _evaluate_regions(fv, c_new, h_new, rule, ncomp)
        evaluations += len(c_new) * nodes_per
        keep = np.ones(len(ids), dtype=bool)
        keep[sel] = False
        new_ids = np.arange(next_id, next_id + len(c_new))
        next_id += len(c_new)
        centers = np.concatenate([centers[keep], c_new])
        halfw = np.concatenate([halfw[keep], h_new])
        ids = np.concatenate([ids[keep], new_ids])
        vals = np.concatenate([vals[keep], v_new])
        errs = np.concatenate([errs[keep], e_new])
        axes = np.concatenate([axes[keep], a_new])
    order = np.argsort(ids, kind="stable")
    total = np.zeros(ncomp)
    for row in vals[order]:
        total = total + row
    nsing = int(np.count_nonzero(singular(centers, halfw))) if singular is not None else 0
    value = float(total[0]) if ncomp == 1 else total
    notes = [] if converged else [f"region budget {max_regions} exhausted"]
    return QuadResult(value, float(errs.sum()), len(ids), nsing, converged, evaluations, notes)


def gaussian_truncation_radius(a: float, dim: int, tol: float, growth_degree: float = 0.0, scale: float = 1.0) -> float:
    """Box half-width ``R`` with ``int_{outside [-R,R]^k} exp(-a|x|^2)(1+|x|)^D <~ tol/10``.

    Uses ``int_{|x_i| > R} exp(-a x_i^2) dx_i <= exp(-a R^2)/(a R)`` per
    coordinate and bounds the polynomial/log growth by ``(1 + sqrt(k) R)^D``.
    """
    target = tol / 10.0
    R = max(1.0, math.sqrt(math.log(max(10.0, scale / target)) / a))
    for _ in range(60):
        bulk = (math.pi / a) ** ((dim - 1) / 2)
        bound = dim * scale * bulk * math.exp(-a * R * R) / (a * R) * (1 + math.sqrt(dim) * R) ** growth_degree
        if bound <= target:
            return R
        R *= 1.05
    return R


def _log_singular_mask(I: LogGaussIntegrand):
    if not I.logs:
        return None

    def mask(centers, halfw):
        d = centers.shape[1]
        flags = np.zeros(len(centers), dtype=bool)
        corners = np.array(list(np.ndindex(*(2,) * d))) * 2 - 1
        for lf in I.logs:
            vals = np.stack([lf.poly(centers + halfw * s[None, :]) for s in corners], axis=1)
            flags |= (vals.min(axis=1) <= 0) & (vals.max(axis=1) >= 0)
            flags |= np.any(vals == 0, axis=1)
        return flags

    return mask


def _integrate(I: LogGaussIntegrand, tol: float | None, signed: bool, max_regions: int) -> QuadResult:
    if I.dim > 4:
        raise UsageError("the adaptive engine supports dimensions up to 4")
    for lf in I.logs:
        if not lf.poly.is_homogeneous(lf.degree):
            raise UsageError(f"log factor {lf.poly.terms} is not homogeneous of degree {lf.degree}")
    if tol is None:
        tol = DEFAULT_TOL[I.dim]
    # |log| <= |x| for |x| >= e; polynomial growth from p and the log powers
    growth = I.poly.degree + sum(lf.power * max(lf.degree, 1) for lf in I.logs)
    scale = sum(abs(c) for _, c in I.poly.terms) or 1.0
    R = gaussian_truncation_radius(I.a, I.dim, tol, growth, scale)
    res = adaptive_integrate(
        lambda X: I.values(X, signed),
        -R * np.ones(I.dim),
        R * np.ones(I.dim),
        tol=tol,
        max_regions=max_regions,
        initial_split=True,
        singular=_log_singular_mask(I),
    )
    res.notes.append(f"truncation radius {R:.4g}")
    return res


def integrate(I: LogGaussIntegrand, tol: float | None = None, max_regions: int = 400_000) -> QuadResult:
    """``int exp(-a|x|^2) p(x) prod_l |log|p_l(x)||^{m_l} dx``."""
    return _integrate(I, tol, signed=False, max_regions=max_regions)


def integrate_signed(
    I: LogGaussIntegrand,
    signed_log_exponents: Sequence[int] | None = None,
    tol: float | None = None,
    max_regions: int = 400_000,
) -> QuadResult:
    """``int exp(-a|x|^2) p(x) prod_l (log|p_l(x)|)^{m_l} dx``.

    ``signed_log_exponents`` overrides the ``power`` of each log factor.
    """
    if signed_log_exponents is not None:
        if len(signed_log_exponents) != len(I.logs):
            raise UsageError("one exponent per log factor is required")
        I = LogGaussIntegrand(
            I.dim,
            I.a,
            I.poly,
            tuple(LogFactor(lf.poly, lf.degree, int(m)) for lf, m in zip(I.logs, signed_log_exponents)),
        )
    return _integrate(I, tol, signed=True, max_regions=max_regions)


# ---------------------------------------------------------------------------
# Monte Carlo oracles


@dataclass(frozen=True)
class MCResult:
    estimate: float
    stderr: float
    n_samples: int

    def to_json(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr, "n_samples": self.n_samples}


def _chunked_mean(sample_fn, n_samples: int, chunk: int = 200_000) -> tuple[float, float]:
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        v = sample_fn(m)
        total += float(np.sum(v))
        total_sq += float(np.sum(v * v))
        done += m
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0) * n_samples / (n_samples - 1)
    return mean, math.sqrt(var / n_samples)


def mc_oracle(I: LogGaussIntegrand, seed: int = 0, n_samples: int = 10 ** 6, signed: bool = True) -> MCResult:
    """Importance sampling from ``N(0, 1/(2a))`` per coordinate (deterministic given ``seed``)."""
    if n_samples < 1000:
        raise UsageError("mc_oracle needs at least 1000 samples")
    rng = np.random.default_rng(seed)
    sigma = math.sqrt(1.0 / (2 * I.a))
    norm = (math.pi / I.a) ** (I.dim / 2)

    def draw(m):
        X = rng.standard_normal((m, I.dim)) * sigma
        return I.values(X, signed) * np.exp(I.a * np.sum(X * X, axis=1))

    mean, se = _chunked_mean(draw, n_samples)
    return MCResult(norm * mean, norm * se, n_samples)


def mc_oracle_callable(
    f: Integrand,
    dim: int,
    seed: int = 0,
    n_samples: int = 10 ** 6,
    scale: float = 1.0,
    proposal: str = "gaussian",
    df: float = 3.0,
) -> MCResult:
    """Importance-sampling estimate of ``int_{R^dim} f(x) dx``.

    ``proposal="gaussian"`` draws ``N(0, scale^2)`` coordinates;
    ``proposal="student"`` draws independent Student-t coordinates with ``df``
    degrees of freedom and the given scale, for integrands with heavier tails.
    """
    from scipy import stats

    if n_samples < 1000:
        raise UsageError("mc_oracle_callable needs at least 1000 samples")
    rng = np.random.default_rng(seed)
    if proposal == "gaussian":
        dist = stats.norm(scale=scale)
    elif proposal == "student":
        dist = stats.t(df=df, scale=scale)
    else:
        raise UsageError(f"unknown proposal {proposal!r}")

    def draw(m):
        X = dist.rvs(size=(m, dim), random_state=rng)
        logq = np.sum(dist.logpdf(X), axis=1)
        return np.asarray(f(X), dtype=float).reshape(m) * np.exp(-logq)

    mean, se = _chunked_mean(draw, n_samples)
    return MCResult(mean, se, n_samples)


# ---------------------------------------------------------------------------
# closed forms used as oracles


def gaussian_moment_1d(k: int, a: float = 1.0) -> float:
    """``int_R x^k exp(-a x^2) dx``."""
    if k % 2:
        return 0.0
    return math.gamma((k + 1) / 2) * a ** (-(k + 1) / 2)


def log_moment_1d(a: float = 1.0) -> float:
    """``I_1(a) = int_R exp(-a u^2) log|u| du = -sqrt(pi/a) (gamma + log(4a)) / 2``."""
    return -math.sqrt(math.pi / a) * (np.euler_gamma + math.log(4 * a)) / 2


def radial_log_2d(a: float = 1.0) -> float:
    """``int_{R^2} exp(-a(y^2+z^2)) log(y^2+z^2) = -(pi/a)(gamma + log a)``."""
    return -(math.pi / a) * (np.euler_gamma + math.log(a))
