"""Invariant checks run by ``torsionlab verify``.

Each check returns an :class:`InvariantResult` holding the measured defect
and the tolerance it is held to.  Exact checks (integer identities) use a
tolerance of 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _accel, _kernels
from .asymptotics import coeff_cij, taylor_part
from .geometry import (
    cartan_polar,
    explicit_r2_unipotent,
    geodesic_distance_squared,
    iwasawa,
    kak,
    random_sl,
    taylor_and_bound_checks,
)
from .heat import KRep, a0_coefficient, a1_bracket, alternating_sum, binom, second_derivative_check
from .orbital import (
    EuclideanGaussian,
    Group,
    OrbitalSpec,
    elliptic_profile,
    j_explicit,
    unipotent_gl2,
    unipotent_gl3,
)
from .quadrature import LogFactor, LogGaussIntegrand, Polynomial, integrate_signed, log_moment_1d, radial_log_2d
from .roots import LeviComposition, ParabolicDatum

DECOMPOSITION_TOL = 1e-10
DISTANCE_TOL = 1e-10
#: Limit of ``r^2(n(x)) / |x|^2`` as ``x -> 0`` for the metric ``r^2 = sum (log lambda_i(g^T g))^2``.
R2_LEADING_CONSTANT = 2.0


@dataclass(frozen=True)
class InvariantResult:
    name: str
    defect: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.defect <= self.tolerance)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "defect": float(self.defect),
            "tolerance": float(self.tolerance),
            "passed": self.passed,
            "detail": self.detail,
        }


def decomposition_roundtrips(n: int, rng: np.random.Generator, samples: int = 200) -> list[InvariantResult]:
    gs = random_sl(n, rng, samples)
    out = []
    for name, fn in (("iwasawa", iwasawa), ("cartan_polar", cartan_polar), ("kak", kak)):
        worst = max(fn(g).residual for g in gs)
        out.append(InvariantResult(f"{name}_roundtrip_sl{n}", worst, DECOMPOSITION_TOL, f"{samples} random matrices"))
    return out


def distance_formula(n: int) -> InvariantResult:
    xs = np.linspace(-5.0, 5.0, 201)
    if n == 2:
        exact = 8 * np.arcsinh(xs / 2) ** 2
        got = np.array([geodesic_distance_squared(unipotent_gl2(np.array([[x]]))[0]) for x in xs])
        detail = "r^2(u(x)) = 8 asinh^2(x/2)"
    else:
        exact = np.array([explicit_r2_unipotent(x) for x in xs])
        got = np.array([geodesic_distance_squared(unipotent_gl3(x, 0.0, 0.0)) for x in xs])
        detail = "r^2(u(x,0,0)) against the closed form"
    return InvariantResult(f"distance_formula_gl{n}", float(np.max(np.abs(got - exact))), DISTANCE_TOL, detail)


def taylor_leading_constant(n: int, rng: np.random.Generator) -> list[InvariantResult]:
    P = ParabolicDatum.standard(LeviComposition.minimal(n))
    dim = n * (n - 1) // 2
    dirs = rng.normal(size=(40, dim))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    samples = np.concatenate([dirs * s for s in np.geomspace(1e-4, 1e-1, 12)])
    rep = taylor_and_bound_checks(samples, P, taylor_radius=0.2)
    lead = InvariantResult(f"r2_leading_constant_gl{n}", abs(rep.leading_constant - R2_LEADING_CONSTANT), 1e-3,
                           f"lim r^2/|x|^2 = {rep.leading_constant:.8g}")
    # the defect must decay linearly: the fitted constant stays bounded
    linear = InvariantResult(f"r2_linear_defect_gl{n}", rep.leading_defect_constant, 10.0,
                             "|r^2/|x|^2 - lim| <= C |x|")
    return [lead, linear]


def binomial_cancellations() -> list[InvariantResult]:
    first = alternating_sum([binom(5, p) for p in range(6)])
    second = alternating_sum([a1_bracket(p) for p in range(6)])
    return [
        InvariantResult("alternating_binomial_5", abs(first), 0, "sum (-1)^p p C(5,p)"),
        InvariantResult("alternating_binomial_5_3", abs(second), 0, "sum (-1)^p p [C(5,p) - 6 C(3,p-1)]"),
    ]


def rotation_invariance() -> list[InvariantResult]:
    out = []
    for direction in ((0, 1), (0, 2), (1, 2)):
        rep = second_derivative_check(direction)
        out.append(InvariantResult(f"det_second_derivative_{direction[0]}{direction[1]}", rep.max_abs, 1e-7,
                                   "|d^2/du^2 det(Id - T(u))| at 0"))
        out.append(InvariantResult(f"det_at_zero_{direction[0]}{direction[1]}", rep.value_at_zero_defect, 1e-10,
                                   "f(lambda, 0) = (lambda - 1)^4"))
    return out


def quadrature_oracles(tol: float) -> list[InvariantResult]:
    one = LogGaussIntegrand(1, 1.0, Polynomial.constant(1.0, 1))
    gauss = integrate_signed(one, tol=1e-12).value
    radial = LogFactor(Polynomial.from_dict({(2, 0): 1.0, (0, 2): 1.0}), 2)
    rlog = integrate_signed(LogGaussIntegrand(2, 1.0, Polynomial.constant(1.0, 2), (radial,)), tol=tol).value
    return [
        InvariantResult("gaussian_1d", abs(gauss - math.sqrt(math.pi)), 1e-10, "int exp(-x^2) = sqrt(pi)"),
        InvariantResult("radial_log_2d", abs(rlog - radial_log_2d()), tol, "int exp(-|x|^2) log|x|^2 = -pi gamma"),
    ]


def weight_integrals(n: int, tol: float) -> list[InvariantResult]:
    if n == 2:
        spec = OrbitalSpec(Group.GL2, LeviComposition((1, 1)), "trivial", EuclideanGaussian(), 1.0)
        exact = log_moment_1d()
    else:
        spec = OrbitalSpec(Group.GL3, LeviComposition((2, 1)), "trivial", EuclideanGaussian(), 1.0)
        exact = radial_log_2d()
    val = j_explicit(spec, tol=min(tol, 1e-8)).value
    return [InvariantResult(f"explicit_weight_integral_gl{n}", abs(val - exact) / abs(exact), tol,
                            "Gaussian weight integral against its closed form")]


def c13_vanishes(tol: float) -> list[InvariantResult]:
    worst = 0.0
    for p in range(6):
        nu = KRep.lambda_p(3, p)
        fn = lambda X, nu=nu: np.array([a0_coefficient(unipotent_gl3(0.0, y, z), nu) for y, z in X])
        cubic = taylor_part(fn, 2, 3, radius=0.05, fit_degree=5, n_points=400)
        worst = max(worst, abs(coeff_cij(cubic, mode="top")))
    return [InvariantResult("c13_zero", worst, tol, "odd cubic Taylor part integrates to 0, p = 0..5")]


def elliptic_slope(tol: float = 0.02) -> list[InvariantResult]:
    worst = 0.0
    for theta in (math.pi / 2, math.pi / 3):
        for X in (0.1, 0.05, 0.02):
            prof = elliptic_profile(theta, X)
            worst = max(worst, abs(prof.r2_kak / (8 * prof.alpha ** 2 * X ** 2) - 1))
    return [InvariantResult("elliptic_r2_slope", worst, tol, "r^2 = 8 alpha^2 X^2 (1 + O(X^2)) for X <= 0.1")]


def kernel_backends_agree(n: int, rng: np.random.Generator) -> InvariantResult:
    # well-conditioned samples: for nearly singular g both eigensolvers lose
    # relative accuracy in the small eigenvalues of g^T g, in different ways
    gs = random_sl(n, rng, 256)
    gs = gs[np.linalg.cond(gs) < 1e2][:64]
    saved = _accel._override
    try:
        _accel.set_backend("numpy")
        a = _kernels.r2_batch(gs)
        _accel.set_backend("numba" if _accel.HAVE_NUMBA else "numpy")
        b = _kernels.r2_batch(gs)
    finally:
        _accel.set_backend(saved)
    rel = float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1.0)))
    return InvariantResult("kernel_backends_agree", rel, 1e-10, "numba and numpy r^2, relative")


def run_invariants(n: int, tol: float = 1e-6, seed: int = 0) -> list[InvariantResult]:
    """The invariant suite for ``GL(n)``, ``n in (2, 3)``."""
    rng = np.random.default_rng(seed)
    out = decomposition_roundtrips(n, rng)
    out.append(distance_formula(n))
    out += taylor_leading_constant(n, rng)
    out += quadrature_oracles(tol)
    out += weight_integrals(n, tol)
    if n == 3:
        out += binomial_cancellations()
        out += rotation_invariance()
        out += c13_vanishes(tol)
    else:
        out += elliptic_slope()
    out.append(kernel_backends_agree(n, rng))
    return out
