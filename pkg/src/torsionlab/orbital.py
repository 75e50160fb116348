"""Weighted and invariant orbital integrals for ``GL(2)`` and ``GL(3)``.

Unipotent integrals are written over coordinates of a unipotent radical
``N`` (``u(x)`` for ``GL(2)``, ``u(x, y, z)`` for ``GL(3)``) against one of
the explicit weights of :data:`EXPLICIT_WEIGHTS`.  Kernels are either

* :class:`EuclideanGaussian` ``f(n(x)) = exp(-a |x|^2 / t)`` in the
  coordinates, which reduces every integral to the Gaussian-log engine and
  admits closed forms, or
* a function on the group (a radial profile of ``r(g)^2`` or the traced
  parametrix) pulled back along ``x -> n(x)``.

Finite-order classes use ``sigma_1 = diag(1, -1)`` and the rotations
``sigma_i`` by ``theta_2 = pi/2`` and ``theta_3 = pi/3`` (``GL(2)``), and
their block embeddings into ``GL(3)``.  Global constants multiplying the
integrals are configuration (``OrbitalSpec.constants``, default 1).
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import NumericalError, UsageError
from .geometry import kak
from .heat import RadialKernel, kernel_from_json as heat_kernel_from_json
from .quadrature import (
    LogFactor,
    LogGaussIntegrand,
    MCResult,
    Polynomial,
    QuadResult,
    adaptive_integrate,
    finiteness_guard,
    integrate_signed,
    mc_oracle,
    mc_oracle_callable,
)
from .roots import LeviComposition
from .weights import UnipotentDatum, w_M_class_batch

THETAS = {2: math.pi / 2, 3: math.pi / 3}
DEFAULT_REL_TOL = {1: 1e-10, 2: 1e-9, 3: 1e-6}
WORKERS_ENV = "TORSIONLAB_WORKERS"


class Group(str, Enum):
    GL2 = "GL2"
    GL3 = "GL3"

    @property
    def n(self) -> int:
        return 2 if self is Group.GL2 else 3


@dataclass(frozen=True)
class EuclideanGaussian:
    """``f(n(x)) = exp(-a |x|^2 / t)`` in the unipotent coordinates (``t = 1`` if unset)."""

    a: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise UsageError("Gaussian rate must be positive")

    def to_json(self) -> dict:
        return {"type": "euclidean", "a": self.a}


Kernel = EuclideanGaussian | RadialKernel


def kernel_from_json(data: dict) -> Kernel:
    if data.get("type") == "euclidean":
        return EuclideanGaussian(float(data.get("a", 1.0)))
    return heat_kernel_from_json(data)


@dataclass(frozen=True)
class OrbitalSpec:
    group: Group
    levi: LeviComposition
    class_label: str
    kernel: Kernel = field(default_factory=EuclideanGaussian)
    t: float | None = None
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "group", Group(self.group))
        if self.levi.n != self.group.n:
            raise UsageError(f"Levi {self.levi.blocks} does not belong to {self.group.value}")
        if self.t is not None and not self.t > 0:
            raise UsageError("t must be positive")
        if self.class_label not in valid_class_labels(self.group, self.levi):
            raise UsageError(f"class {self.class_label!r} is not available for {self.group.value} with Levi {self.levi.blocks}")

    def constant(self, name: str, default: float = 1.0) -> float:
        return float(self.constants.get(name, default))

    def with_t(self, t: float) -> "OrbitalSpec":
        return OrbitalSpec(self.group, self.levi, self.class_label, self.kernel, t, dict(self.constants))

    def to_json(self) -> dict:
        return {
            "group": self.group.value,
            "levi": list(self.levi.blocks),
            "class": self.class_label,
            "kernel": self.kernel.to_json(),
            "t": self.t,
            "constants": dict(self.constants),
        }

    @classmethod
    def from_json(cls, data: dict) -> "OrbitalSpec":
        try:
            return cls(
                Group(data["group"].upper()),
                LeviComposition(tuple(data["levi"])),
                str(data["class"]),
                kernel_from_json(data.get("kernel", {"type": "euclidean"})),
                None if data.get("t") is None else float(data["t"]),
                dict(data.get("constants", {})),
            )
        except (KeyError, ValueError) as exc:
            raise UsageError(f"invalid orbital spec: {exc}") from exc


@dataclass
class OrbitalResult:
    value: float | np.ndarray
    quad: QuadResult | None = None
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        val = self.value.tolist() if isinstance(self.value, np.ndarray) else self.value
        return {"value": val, "quad": None if self.quad is None else self.quad.to_json(), "notes": list(self.notes)}


# ---------------------------------------------------------------------------
# coordinates


def unipotent_gl2(X: np.ndarray) -> np.ndarray:
    G = np.broadcast_to(np.eye(2), (X.shape[0], 2, 2)).copy()
    G[:, 0, 1] = X[:, 0]
    return G


def unipotent_gl3(x, y, z) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    G = np.broadcast_to(np.eye(3), x.shape + (3, 3)).copy()
    G[..., 0, 1] = x
    G[..., 0, 2] = y
    G[..., 1, 2] = z
    return G


def _safe_log_abs(v: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.abs(v))


# ---------------------------------------------------------------------------
# explicit weight catalog


@dataclass(frozen=True)
class ExplicitWeight:
    """A weight on ``N(R)`` coordinates with its decomposition into Gaussian-log terms."""

    name: str
    group: Group
    levi: tuple[int, ...]
    class_label: str
    dim: int
    embed: Callable[[np.ndarray], np.ndarray]
    pointwise: Callable[[np.ndarray], np.ndarray]
    terms: tuple[tuple[float, tuple[LogFactor, ...]], ...]
    description: str
    #: Coordinates whose hyperplane ``x_i = 0`` carries the logarithmic singularity.
    singular_coords: tuple[int, ...] = ()

    def integrands(self, a: float) -> list[tuple[float, LogGaussIntegrand]]:
        one = Polynomial.constant(1.0, self.dim)
        return [(c, LogGaussIntegrand(self.dim, a, one, logs)) for c, logs in self.terms]


def _m(exps):
    return Polynomial.monomial(exps)


EXPLICIT_WEIGHTS: dict[str, ExplicitWeight] = {
    w.name: w
    for w in (
        ExplicitWeight(
            "gl2_m0",
            Group.GL2,
            (1, 1),
            "trivial",
            1,
            unipotent_gl2,
            lambda X: _safe_log_abs(X[:, 0]),
            ((1.0, (LogFactor(_m((1,)), 1),)),),
            "log|x| on u(x)",
            (0,),
        ),
        ExplicitWeight(
            "gl3_m1_trivial",
            Group.GL3,
            (2, 1),
            "trivial",
            2,
            lambda X: unipotent_gl3(np.zeros(len(X)), X[:, 0], X[:, 1]),
            lambda X: _safe_log_abs(X[:, 0] ** 2 + X[:, 1] ** 2),
            ((1.0, (LogFactor(Polynomial.from_dict({(2, 0): 1.0, (0, 2): 1.0}), 2),)),),
            "log(y^2+z^2) on u(0,y,z)",
        ),
        ExplicitWeight(
            "gl3_m1_subregular",
            Group.GL3,
            (2, 1),
            "subregular",
            3,
            lambda X: unipotent_gl3(X[:, 0], X[:, 1], X[:, 2]),
            lambda X: _safe_log_abs(X[:, 0] * X[:, 2]),
            ((1.0, (LogFactor(_m((1, 0, 1)), 2),)),),
            "log|xz| on u(x,y,z)",
            (0, 2),
        ),
        ExplicitWeight(
            "gl3_m0",
            Group.GL3,
            (1, 1, 1),
            "trivial",
            3,
            lambda X: unipotent_gl3(X[:, 0], X[:, 1], X[:, 2]),
            lambda X: (
                _safe_log_abs(X[:, 0]) * _safe_log_abs(X[:, 2])
                + _safe_log_abs(X[:, 0]) ** 2
                + _safe_log_abs(X[:, 2]) ** 2
            ),
            (
                (1.0, (LogFactor(_m((1, 0, 0)), 1), LogFactor(_m((0, 0, 1)), 1))),
                (1.0, (LogFactor(_m((1, 0, 0)), 1, 2),)),
                (1.0, (LogFactor(_m((0, 0, 1)), 1, 2),)),
            ),
            "log|x|log|z| + log^2|x| + log^2|z| on u(x,y,z)",
            (0, 2),
        ),
    )
}

#: Invariant unipotent integrals: Jordan type of the class -> coordinates of its Richardson radical.
INVARIANT_CLASSES: dict[tuple[Group, str], tuple[int, Callable[[np.ndarray], np.ndarray]]] = {
    (Group.GL2, "2"): (1, unipotent_gl2),
    (Group.GL3, "3"): (3, lambda X: unipotent_gl3(X[:, 0], X[:, 1], X[:, 2])),
    (Group.GL3, "2,1"): (2, lambda X: unipotent_gl3(np.zeros(len(X)), X[:, 0], X[:, 1])),
}

GL2_FINITE = ("sigma1", "sigma2+", "sigma2-", "sigma3+", "sigma3-")
GL3_FINITE = tuple(f"sigma{i}{s}{e}" for i in (2, 3) for s in "+-" for e in "+-") + (
    "sigma1+",
    "sigma1-",
    "sigma1+u1",
    "sigma1-u1",
)


def valid_class_labels(group: Group, levi: LeviComposition) -> set[str]:
    labels = {w.class_label for w in EXPLICIT_WEIGHTS.values() if w.group == group and w.levi == levi.blocks}
    if levi.num_blocks == 1:
        labels |= {lab for (g, lab) in INVARIANT_CLASSES if g == group}
        labels.add("1,1" if group is Group.GL2 else "1,1,1")
    if group is Group.GL2 and levi.blocks in ((1, 1), (2,)):
        labels |= set(GL2_FINITE)
    if group is Group.GL3 and levi.blocks in ((2, 1), (3,)):
        labels |= set(GL3_FINITE)
    if group is Group.GL3 and levi.blocks == (1, 1, 1):
        labels |= {"sigma1+", "sigma1-"}
    return labels


def explicit_weight_for(spec: OrbitalSpec) -> ExplicitWeight:
    for w in EXPLICIT_WEIGHTS.values():
        if w.group == spec.group and w.levi == spec.levi.blocks and w.class_label == spec.class_label:
            return w
    raise UsageError(f"no explicit weight for {spec.group.value}, Levi {spec.levi.blocks}, class {spec.class_label!r}")


# ---------------------------------------------------------------------------
# integration helpers


def _kernel_on_group(kernel: RadialKernel, G: np.ndarray, t: float) -> np.ndarray:
    vals = kernel.evaluate(G, t)
    return np.asarray(vals, dtype=float)


def _components(kernel: Kernel) -> int:
    return 1 if isinstance(kernel, EuclideanGaussian) else int(getattr(kernel, "components", 1))


def _truncation(fn: Callable[[np.ndarray], np.ndarray], dim: int, nonneg: Sequence[int] = (), start: float = 2.0,
                rel: float = 1e-13, cap: float = 1e4) -> float:
    """Smallest ``R`` (grown geometrically) with ``|fn|`` on the faces of ``[-R, R]^dim`` negligible.

    Coordinates listed in ``nonneg`` run over ``[0, R]``.
    """
    rng = np.random.default_rng(0)
    inner = rng.uniform(-1.0, 1.0, (4000, dim))
    for q in nonneg:
        inner[:, q] = np.abs(inner[:, q])
    vals = np.abs(np.asarray(fn(inner), dtype=float))
    vals = vals[np.isfinite(vals)]
    scale = float(vals.max()) if vals.size and vals.max() > 0 else 1.0
    R = start
    while R < cap:
        pts = rng.uniform(-R, R, (4000, dim))
        for q in nonneg:
            pts[:, q] = np.abs(pts[:, q])
        face = rng.integers(0, dim, len(pts))
        sign = np.where(rng.random(len(pts)) < 0.5, -1.0, 1.0)
        for q in nonneg:
            sign[face == q] = 1.0
        pts[np.arange(len(pts)), face] = sign * R
        edge = float(np.max(np.abs(np.atleast_2d(fn(pts).T).T)))
        if edge <= rel * scale:
            return R
        R *= 1.5
    raise NumericalError(f"integrand does not decay within radius {cap:g}")


def _mc_group(fn, dim: int, seed: int, n_samples: int, nonneg: Sequence[int] = ()) -> MCResult:
    """Student-proposal Monte Carlo for kernels on the group.

    Samples beyond twice the truncation radius are dropped: the kernel there is
    below ``1e-13`` of its maximum while the matrices become numerically singular.
    """
    R = 2 * _truncation(fn, dim, nonneg)

    def guarded(X):
        out = np.zeros(len(X))
        inside = np.all(np.abs(X) <= R, axis=1)
        if np.any(inside):
            out[inside] = fn(X[inside])
        return out

    return mc_oracle_callable(guarded, dim, seed=seed, n_samples=n_samples, proposal="student", df=3.0)


def _cubic_substitution(fn, coords: Sequence[int]):
    """``x_i = u_i^3`` on ``coords``: a logarithmic singularity on ``x_i = 0`` becomes ``u^2 log|u|``."""
    coords = list(coords)

    def g(U):
        X = np.array(U, dtype=float, copy=True)
        X[:, coords] = U[:, coords] ** 3
        jac = np.prod(3 * U[:, coords] ** 2, axis=1)
        F = np.asarray(fn(X), dtype=float)
        return F * (jac[:, None] if F.ndim == 2 else jac)

    return g


def _box_integrate(fn, dim: int, ncomp: int, nonneg: Sequence[int] = (), rel_tol: float | None = None,
                   max_regions: int = 400_000, singular_coords: Sequence[int] = ()) -> QuadResult:
    rel_tol = DEFAULT_REL_TOL[min(dim, 3)] if rel_tol is None else rel_tol
    R = _truncation(fn, dim, nonneg)
    lo = -R * np.ones(dim)
    hi = R * np.ones(dim)
    for q in nonneg:
        lo[q] = 0.0
    if singular_coords:
        fn = _cubic_substitution(fn, singular_coords)
        for q in singular_coords:
            lo[q] = math.copysign(abs(lo[q]) ** (1 / 3), lo[q])
            hi[q] = hi[q] ** (1 / 3)
    res = adaptive_integrate(fn, lo, hi, tol=1e-300, rel_tol=rel_tol, max_regions=max_regions, components=ncomp,
                             initial_split=True)
    res.notes.append(f"truncation radius {R:.4g}")
    return res


def _pullback(kernel: RadialKernel, embed, weight, dim: int, t: float):
    """Integrand in scaled coordinates ``x = sqrt(t) xi``: ``t^{dim/2} f(n(x)) w(x)``."""
    s = math.sqrt(t)
    ncomp = _components(kernel)

    def fn(Xi):
        X = s * Xi
        F = _kernel_on_group(kernel, embed(X), t)
        w = weight(X)
        if ncomp > 1:
            return F * (w * s ** dim)[:, None]
        return F * w * s ** dim

    return fn


def _check_radial(kernel: Kernel):
    if isinstance(kernel, EuclideanGaussian):
        raise UsageError("this integral needs a kernel on the group (radial profile or parametrix)")


# ---------------------------------------------------------------------------
# unipotent integrals


def j_explicit(spec: OrbitalSpec, tol: float | None = None, max_regions: int = 400_000) -> OrbitalResult:
    """``int_{N(R)} f(n(x)) w(x) dx`` with the explicit weight of the class."""
    w = explicit_weight_for(spec)
    t = 1.0 if spec.t is None else spec.t
    c = spec.constant("c")
    if isinstance(spec.kernel, EuclideanGaussian):
        a = spec.kernel.a / t
        total, err, regions, notes = 0.0, 0.0, 0, []
        for coef, I in w.integrands(a):
            if not finiteness_guard(I):
                raise UsageError(f"divergent integrand for {w.name}")
            res = integrate_signed(I, tol=tol, max_regions=max_regions)
            total += coef * res.value
            err += abs(coef) * res.error_estimate
            regions += res.regions_used
            notes += res.notes
        quad = QuadResult(total, err, regions, 0, all("exhausted" not in n for n in notes), 0, notes)
        return OrbitalResult(c * total, quad)
    fn = _pullback(spec.kernel, w.embed, w.pointwise, w.dim, t)
    res = _box_integrate(fn, w.dim, _components(spec.kernel), rel_tol=tol, max_regions=max_regions,
                         singular_coords=w.singular_coords)
    return OrbitalResult(c * np.asarray(res.value) if _components(spec.kernel) > 1 else c * res.value, res)


def j_explicit_mc(spec: OrbitalSpec, seed: int = 0, n_samples: int = 10 ** 6) -> MCResult:
    """Monte Carlo oracle for :func:`j_explicit` (scalar kernels)."""
    w = explicit_weight_for(spec)
    t = 1.0 if spec.t is None else spec.t
    c = spec.constant("c")
    if isinstance(spec.kernel, EuclideanGaussian):
        a = spec.kernel.a / t
        parts = w.integrands(a)
        if len(parts) == 1:
            res = mc_oracle(parts[0][1], seed=seed, n_samples=n_samples)
            return MCResult(c * parts[0][0] * res.estimate, abs(c * parts[0][0]) * res.stderr, res.n_samples)
        f = lambda X: np.exp(-a * np.sum(X * X, axis=1)) * w.pointwise(X)
        res = mc_oracle_callable(f, w.dim, seed=seed, n_samples=n_samples, scale=1 / math.sqrt(2 * a))
        return MCResult(c * res.estimate, abs(c) * res.stderr, res.n_samples)
    if _components(spec.kernel) != 1:
        raise UsageError("the Monte Carlo oracle needs a scalar kernel")
    fn = _pullback(spec.kernel, w.embed, w.pointwise, w.dim, t)
    res = _mc_group(fn, w.dim, seed, n_samples)
    return MCResult(c * res.estimate, abs(c) * res.stderr, res.n_samples)


def j_invariant(spec: OrbitalSpec, tol: float | None = None) -> OrbitalResult:
    """Unweighted integral over the Richardson radical ``V(R)`` of the class (``M = G``)."""
    if spec.levi.num_blocks != 1:
        raise UsageError("invariant integrals are attached to M = G")
    t = 1.0 if spec.t is None else spec.t
    c = spec.constant("c")
    n = spec.group.n
    if spec.class_label in ("1,1", "1,1,1"):
        if isinstance(spec.kernel, EuclideanGaussian):
            return OrbitalResult(c * 1.0, notes=["point mass at the identity"])
        val = _kernel_on_group(spec.kernel, np.eye(n)[None], t)[0]
        return OrbitalResult(c * val, notes=["point mass at the identity"])
    try:
        dim, embed = INVARIANT_CLASSES[(spec.group, spec.class_label)]
    except KeyError as exc:
        raise UsageError(f"unknown invariant class {spec.class_label!r}") from exc
    if isinstance(spec.kernel, EuclideanGaussian):
        a = spec.kernel.a / t
        return OrbitalResult(c * (math.pi / a) ** (dim / 2), notes=["closed-form Gaussian integral"])
    fn = _pullback(spec.kernel, embed, lambda X: np.ones(len(X)), dim, t)
    res = _box_integrate(fn, dim, _components(spec.kernel), rel_tol=tol)
    return OrbitalResult(c * (np.asarray(res.value) if _components(spec.kernel) > 1 else res.value), res)


def j_invariant_mc(spec: OrbitalSpec, seed: int = 0, n_samples: int = 10 ** 6) -> MCResult:
    _check_radial(spec.kernel)
    dim, embed = INVARIANT_CLASSES[(spec.group, spec.class_label)]
    t = 1.0 if spec.t is None else spec.t
    fn = _pullback(spec.kernel, embed, lambda X: np.ones(len(X)), dim, t)
    res = _mc_group(fn, dim, seed, n_samples)
    c = spec.constant("c")
    return MCResult(c * res.estimate, abs(c) * res.stderr, res.n_samples)


def generic_datum(spec: OrbitalSpec) -> UnipotentDatum:
    """The class datum whose ``Lie(N1)`` coordinates are the integration coordinates."""
    w = explicit_weight_for(spec)
    if w.class_label != "trivial":
        raise UsageError("the generic-weight path covers classes with X0 = 0 (pi = n(x))")
    return UnipotentDatum.trivial(spec.levi)


def j_generic(spec: OrbitalSpec, tol: float | None = None, max_regions: int = 200_000) -> OrbitalResult:
    """Integral against the numerically evaluated weight ``w_M_class`` (scalar kernels).

    The Lie(N1) coordinates of ``pi = n(x)`` are the integration coordinates,
    listed row-major, which is the coordinate order of the explicit catalog.
    """
    datum = generic_datum(spec)
    w = explicit_weight_for(spec)
    dim = len(datum.n1_positions)
    t = 1.0 if spec.t is None else spec.t
    weight = lambda X: w_M_class_batch(datum, X)
    if isinstance(spec.kernel, EuclideanGaussian):
        a = spec.kernel.a / t
        fn = lambda X: np.exp(-a * np.sum(X * X, axis=1)) * weight(X)
    else:
        if _components(spec.kernel) != 1:
            raise UsageError("the generic-weight path needs a scalar kernel")
        fn = _pullback(spec.kernel, w.embed, weight, dim, t)
    rel = tol if tol is not None else {1: 1e-9, 2: 1e-7, 3: 1e-5}[dim]
    res = _box_integrate(fn, dim, 1, rel_tol=rel, max_regions=max_regions)
    return OrbitalResult(spec.constant("c") * res.value, res)


# ---------------------------------------------------------------------------
# finite-order classes, GL(2)


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def elliptic_conjugate(theta: float, X, sign: float = 1.0) -> np.ndarray:
    """``a^{-1} sigma a`` with ``a = diag(e^X, e^{-X})``: ``[[c, e^{-2X} s], [-e^{2X} s, c]]``."""
    X = np.asarray(X, dtype=float)
    c, s = math.cos(theta), math.sin(theta)
    G = np.empty(X.shape + (2, 2))
    G[..., 0, 0] = c
    G[..., 1, 1] = c
    G[..., 0, 1] = np.exp(-2 * X) * s
    G[..., 1, 0] = -np.exp(2 * X) * s
    return sign * G


@dataclass(frozen=True)
class EllipticProfile:
    X: float
    Y: float
    alpha: float
    r2_kak: float
    r2_geodesic: float


def elliptic_profile(theta: float, X: float) -> EllipticProfile:
    """KAK parameter ``Y`` of ``a^{-1} sigma a`` and the constant ``alpha = sinh(Y)/sinh(2X)``.

    ``r2_kak = 2 Y^2`` is the squared norm of ``(Y, -Y)``; ``r2_geodesic`` is
    ``sum_i log^2 lambda_i(g^T g) = 8 Y^2`` in the metric used elsewhere.
    """
    g = elliptic_conjugate(theta, X)
    Y = float(np.max(np.diag(kak(g).H)))
    alpha = math.sinh(Y) / math.sinh(2 * X) if X != 0 else abs(math.sin(theta))
    r2g = float(_kernels.r2_batch(g[None])[0])
    return EllipticProfile(float(X), Y, alpha, 2 * Y * Y, r2g)


def elliptic_alpha(theta: float, X: float = 0.3) -> float:
    """Measured ``alpha`` with ``sinh(Y) = alpha sinh(2X)``; equal to ``|sin theta|`` for every ``X``."""
    return elliptic_profile(theta, X).alpha


def _parse_gl2_label(label: str) -> tuple[int, float]:
    if label == "sigma1":
        return 1, 1.0
    if label in GL2_FINITE:
        return int(label[5]), 1.0 if label[6] == "+" else -1.0
    raise UsageError(f"unknown GL(2) finite-order class {label!r}")


def j_finite_order_gl2(spec: OrbitalSpec, tol: float | None = None) -> OrbitalResult:
    """Finite-order classes of ``GL(2)``.

    ``sigma1``: ``a1 int f(u(x)) log(1+x^2) dx + a2 int f(u(x)) dx``.
    ``sigma_i^+-``: ``a_i int_0^oo f(a^{-1} sigma a) sinh(2X) dX``.
    """
    if spec.group is not Group.GL2:
        raise UsageError("GL(2) finite-order integrals need group GL2")
    i, sign = _parse_gl2_label(spec.class_label)
    t = 1.0 if spec.t is None else spec.t
    if i == 1:
        a1, a2 = spec.constant("a1"), spec.constant("a2")
        if isinstance(spec.kernel, EuclideanGaussian):
            a = spec.kernel.a / t
            f = lambda X: np.exp(-a * X[:, 0] ** 2) * (a1 * np.log1p(X[:, 0] ** 2) + a2)
            res = _box_integrate(f, 1, 1, rel_tol=tol)
        else:
            fn = _pullback(spec.kernel, unipotent_gl2, lambda X: a1 * np.log1p(X[:, 0] ** 2) + a2, 1, t)
            res = _box_integrate(fn, 1, _components(spec.kernel), rel_tol=tol)
        return OrbitalResult(res.value, res)
    _check_radial(spec.kernel)
    theta = THETAS[i]
    ai = spec.constant(f"a{i}")
    # X scales like sqrt(t) near the identity
    s = math.sqrt(t)

    def fn(Xi):
        X = s * Xi[:, 0]
        F = _kernel_on_group(spec.kernel, elliptic_conjugate(theta, X, sign), t)
        jac = np.sinh(2 * X) * s
        return F * (jac[:, None] if F.ndim == 2 else jac)

    res = _box_integrate(fn, 1, _components(spec.kernel), nonneg=(0,), rel_tol=tol)
    return OrbitalResult(ai * (np.asarray(res.value) if _components(spec.kernel) > 1 else res.value), res)


def j_finite_order_gl2_mc(spec: OrbitalSpec, seed: int = 0, n_samples: int = 10 ** 6) -> MCResult:
    i, sign = _parse_gl2_label(spec.class_label)
    t = 1.0 if spec.t is None else spec.t
    if i == 1:
        a1, a2 = spec.constant("a1"), spec.constant("a2")
        if isinstance(spec.kernel, EuclideanGaussian):
            a = spec.kernel.a / t
            f = lambda X: np.exp(-a * X[:, 0] ** 2) * (a1 * np.log1p(X[:, 0] ** 2) + a2)
            return mc_oracle_callable(f, 1, seed=seed, n_samples=n_samples, scale=1 / math.sqrt(2 * a))
        fn = _pullback(spec.kernel, unipotent_gl2, lambda X: a1 * np.log1p(X[:, 0] ** 2) + a2, 1, t)
        return _mc_group(fn, 1, seed, n_samples)
    _check_radial(spec.kernel)
    theta = THETAS[i]
    s = math.sqrt(t)

    def fn(Xi):
        X = np.abs(s * Xi[:, 0])
        F = _kernel_on_group(spec.kernel, elliptic_conjugate(theta, X, sign), t)
        return 0.5 * F * np.sinh(2 * X) * s

    res = _mc_group(fn, 1, seed, n_samples)
    ai = spec.constant(f"a{i}")
    return MCResult(ai * res.estimate, abs(ai) * res.stderr, res.n_samples)


# ---------------------------------------------------------------------------
# finite-order classes, GL(3)


def _parse_gl3_label(label: str) -> tuple[int, float, float, bool]:
    """``(i, overall sign, sign of the GL(1) entry, unipotent part u1)``."""
    if label not in GL3_FINITE:
        raise UsageError(f"unknown GL(3) finite-order class {label!r}")
    i = int(label[5])
    sign = 1.0 if label[6] == "+" else -1.0
    if i == 1:
        return 1, sign, -1.0, label.endswith("u1")
    return i, sign, 1.0 if label[7] == "+" else -1.0, False


def gl3_finite_element(label: str) -> np.ndarray:
    i, sign, last, with_u1 = _parse_gl3_label(label)
    g = np.eye(3)
    if i > 1:
        g[:2, :2] = rotation(THETAS[i])
    g[2, 2] = last
    g = sign * g
    if with_u1:
        g = g @ unipotent_gl3(1.0, 0.0, 0.0)
    return g


def shifted_weight_vector(block: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """``w = (id - block)^{-1} (x, y)^T`` for a stack of ``(x, y)``."""
    A = np.eye(2) - block
    if abs(np.linalg.det(A)) < 1e-14:
        raise NumericalError("id - m^{-1} sigma m is singular")
    return np.linalg.solve(A, np.asarray(xy, dtype=float).T).T


def j_finite_order_gl3(spec: OrbitalSpec, tol: float | None = None) -> OrbitalResult:
    """Finite-order classes of ``GL(3)`` relative to ``M = GL(2) x GL(1)`` (or ``M = G``, ``M_0``).

    Elliptic ``sigma_i^{+-,+-}``: the ``M_sigma \\ M`` integral is reduced by
    KAK on the ``GL(2)`` block to ``int_0^oo sinh(2X) dX`` with ``m = a(X)``,
    and the ``U`` integral runs over ``u(0, x, y)``.  The weight (``M`` only)
    is ``log(1 + |w|^2)`` with ``w = (id - m^{-1} sigma m)^{-1}(x, y)^T``.

    ``sigma_1^+-``: ``int_U f(sigma_1 u) log(1 + x^2 + y^2) du``;
    ``sigma_1^+- u1``: the same weight over ``U_0`` with
    ``u = u(a, 0, 0) u(0, x, y)``.  For ``M = M_0`` the weight of
    ``sigma_1^+-`` is ``log(1 + x^2 + y^2) + c_a log|a| + c_0`` over ``U_0``
    (``c_a``, ``c_0`` configurable, defaults 1 and 0).  For ``M = G`` the
    weight is 1.
    """
    if spec.group is not Group.GL3:
        raise UsageError("GL(3) finite-order integrals need group GL3")
    _check_radial(spec.kernel)
    i, sign, last, with_u1 = _parse_gl3_label(spec.class_label)
    t = 1.0 if spec.t is None else spec.t
    s = math.sqrt(t)
    weighted = spec.levi.blocks != (3,)
    ncomp = _components(spec.kernel)
    c = spec.constant("c")

    def combine(F, w):
        return F * (w[:, None] if F.ndim == 2 else w)

    if i > 1:
        theta = THETAS[i]

        def fn(P):
            X = s * P[:, 0]
            xy = s * P[:, 1:]
            blocks = elliptic_conjugate(theta, X, sign)
            G = np.zeros((len(P), 3, 3))
            G[:, :2, :2] = blocks
            G[:, 2, 2] = sign * last
            G = G @ unipotent_gl3(np.zeros(len(P)), xy[:, 0], xy[:, 1])
            F = _kernel_on_group(spec.kernel, G, t)
            jac = np.sinh(2 * X) * s ** 3
            if weighted:
                rhs = xy.T
                A = np.eye(2)[None] - blocks
                wv = np.linalg.solve(A, rhs.T[..., None])[..., 0]
                jac = jac * np.log1p(np.sum(wv * wv, axis=1))
            return combine(F, jac)

        res = _box_integrate(fn, 3, ncomp, nonneg=(0,), rel_tol=tol)
    else:
        sigma = gl3_finite_element(spec.class_label.replace("u1", ""))
        full = with_u1 or spec.levi.blocks == (1, 1, 1)
        ca, c0 = spec.constant("c_a", 1.0), spec.constant("c_0", 0.0)

        def fn(P):
            if full:
                a_, xy = s * P[:, 0], s * P[:, 1:]
            else:
                a_, xy = np.zeros(len(P)), s * P
            shift = 1.0 if with_u1 else 0.0
            U = unipotent_gl3(a_ + shift, np.zeros(len(P)), np.zeros(len(P))) @ unipotent_gl3(
                np.zeros(len(P)), xy[:, 0], xy[:, 1]
            )
            F = _kernel_on_group(spec.kernel, sigma[None] @ U, t)
            w = np.ones(len(P)) * s ** P.shape[1]
            if weighted:
                w = w * np.log1p(np.sum(xy * xy, axis=1))
                if spec.levi.blocks == (1, 1, 1):
                    w = w + s ** P.shape[1] * (ca * _safe_log_abs(a_) + c0)
            return combine(F, w)

        res = _box_integrate(fn, 3 if full else 2, ncomp, rel_tol=tol)
    return OrbitalResult(c * (np.asarray(res.value) if ncomp > 1 else res.value), res)


# ---------------------------------------------------------------------------
# t grids


def dispatch(spec: OrbitalSpec, tol: float | None = None) -> OrbitalResult:
    """Route a spec to the matching integral."""
    if spec.class_label in GL2_FINITE and spec.group is Group.GL2:
        return j_finite_order_gl2(spec, tol)
    if spec.class_label in GL3_FINITE and spec.group is Group.GL3:
        return j_finite_order_gl3(spec, tol)
    if spec.levi.num_blocks == 1:
        return j_invariant(spec, tol)
    return j_explicit(spec, tol)


def _value_at(args):
    spec, t, tol = args
    res = dispatch(spec.with_t(t), tol)
    return res.value


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"{WORKERS_ENV} must be an integer") from exc
    return max(1, n)


def t_grid_values(spec: OrbitalSpec, ts: Sequence[float], tol: float | None = None,
                  workers: int | None = None) -> list[tuple[float, float | np.ndarray]]:
    """``(t, J(t))`` for every ``t``; the order of ``ts`` is kept regardless of ``workers``."""
    ts = [float(t) for t in ts]
    if any(t <= 0 for t in ts):
        raise UsageError("t values must be positive")
    workers = worker_count() if workers is None else workers
    jobs = [(spec, t, tol) for t in ts]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(_value_at, jobs))
    else:
        values = [_value_at(j) for j in jobs]
    return list(zip(ts, values))


def write_t_grid_csv(target, rows: Sequence[tuple[float, float | np.ndarray]]) -> None:
    """CSV ``t, J`` (or ``t, J0, J1, ...``); ``target`` is a path or an open text stream."""
    if hasattr(target, "write"):
        _t_grid_rows(target, rows)
        return
    with open(target, "w", newline="") as fh:
        _t_grid_rows(fh, rows)


def _t_grid_rows(fh, rows) -> None:
    writer = csv.writer(fh)
    first = np.atleast_1d(rows[0][1]) if rows else np.zeros(1)
    names = ["J"] if first.size == 1 else [f"J{q}" for q in range(first.size)]
    writer.writerow(["t"] + names)
    for t, v in rows:
        writer.writerow([repr(float(t))] + [repr(float(x)) for x in np.atleast_1d(v)])


def read_t_grid_csv(path) -> list[tuple[float, np.ndarray]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "t":
            raise UsageError("t-grid CSV must start with a 't' column")
        try:
            rows = [(float(r[0]), np.array([float(x) for x in r[1:]])) for r in reader if r]
        except ValueError as exc:
            raise UsageError(f"malformed t-grid CSV: {exc}") from exc
    return rows
