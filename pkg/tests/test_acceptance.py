"""Acceptance criteria AC1 to AC11.

Each test records one ``ACn PASS|FAIL`` line (shown in the pytest terminal
summary by ``conftest.py``) and then asserts the criterion with its stated
tolerance.  Run only this suite with::

    pytest tests/test_acceptance.py -v

or print the lines directly with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import math
import time
from math import comb

import mpmath
import numpy as np
from scipy.linalg import expm

from torsionlab import _kernels
from torsionlab.asymptotics import (
    TraceSamples,
    coeff_cij,
    effective_exponent,
    expansion_from_coefficients,
    exponential_expansion_polynomials,
    fit_expansion,
    geometric_grid,
    polynomial_scale,
    polynomial_sum,
    taylor_part,
)
from torsionlab.geometry import cartan_polar, explicit_r2_unipotent, geodesic_distance_squared, iwasawa, kak, random_sl
from torsionlab.heat import (
    GaussianKernel,
    KRep,
    a0_coefficient,
    a1_bracket,
    binom,
    det_id_minus_T,
    second_derivative_check,
)
from torsionlab.orbital import (
    THETAS,
    EuclideanGaussian,
    OrbitalSpec,
    elliptic_alpha,
    elliptic_profile,
    j_explicit,
    j_explicit_mc,
    t_grid_values,
    unipotent_gl3,
)
from torsionlab.quadrature import (
    LogFactor,
    LogGaussIntegrand,
    Polynomial,
    integrate_signed,
)
from torsionlab.roots import LeviComposition
from torsionlab.weights import UnipotentDatum, calibrate, scaling_fit, w_M_class_batch
from torsionlab.zeta import MellinZeta, finite_part_and_torsion

#: ``AC`` number -> report line, filled in by the tests and printed by conftest.
REPORT: dict[int, str] = {}

M0_2 = LeviComposition((1, 1))
M1 = LeviComposition((2, 1))
M0_3 = LeviComposition((1, 1, 1))


def record(ac: int, passed: bool, detail: str, started: float) -> None:
    REPORT[ac] = f"AC{ac:<2} {'PASS' if passed else 'FAIL'}  {detail}  [{time.perf_counter() - started:.1f} s]"
    print(REPORT[ac])


# ---------------------------------------------------------------------------


def test_ac1_decomposition_roundtrips():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = {}
    for n in (2, 3):
        gs = random_sl(n, rng, 1000)
        for g in gs:
            iw = iwasawa(g)
            po = cartan_polar(g)
            ka = kak(g)
            errs = {
                "iwasawa": np.linalg.norm(iw.n @ iw.m @ iw.k - g),
                "polar": np.linalg.norm(expm(po.Y) @ po.k - g),
                "kak": np.linalg.norm(ka.k1 @ np.diag(np.exp(ka.H)) @ ka.k2 - g),
            }
            for key, e in errs.items():
                worst[(n, key)] = max(worst.get((n, key), 0.0), float(e))
    top = max(worst.values())
    passed = top <= 1e-10
    record(1, passed, f"max Frobenius reconstruction error {top:.2e} over 1000 SL(2) + 1000 SL(3) (tol 1e-10)", t0)
    assert passed


def test_ac2_distance_formula_and_taylor_ratio():
    t0 = time.perf_counter()
    xs = np.linspace(-5.0, 5.0, 1001)
    dist_err = max(abs(geodesic_distance_squared(unipotent_gl3(x, 0.0, 0.0)) - explicit_r2_unipotent(x)) for x in xs)
    # Taylor ratio 4 r^2 / |x|^2 along random directions of N(R) for GL(3)
    rng = np.random.default_rng(2)
    dirs = rng.normal(size=(20, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    scales = np.geomspace(1e-4, 1e-1, 10)
    ratios = np.array([[4 * float(_kernels.r2_batch(unipotent_gl3(*(s * d))[None])[0]) / s ** 2 for d in dirs]
                       for s in scales])
    defect = np.abs(ratios - 1.0).max(axis=1)
    linear_const = float(np.max(defect / scales))
    limit = float(np.median(ratios[0]))
    limit_defect = np.abs(ratios - limit).max(axis=1)
    limit_const = float(np.max(limit_defect / scales))
    distance_ok = dist_err <= 1e-10
    taylor_ok = bool(np.all(defect <= 10.0 * scales))
    passed = distance_ok and taylor_ok
    record(2, passed,
           f"distance {'ok' if distance_ok else 'FAIL'} (max err {dist_err:.1e}, tol 1e-10); "
           f"Taylor ratio {'ok' if taylor_ok else 'FAIL'}: 4r^2/|x|^2 -> {limit:.6f} (expected 1), "
           f"|ratio - 1| / |x| up to {linear_const:.3g}, |ratio - {limit:.0f}| <= {limit_const:.3g} |x|", t0)
    assert distance_ok
    assert taylor_ok


def test_ac3_binomial_cancellations():
    t0 = time.perf_counter()
    first = sum((-1) ** p * p * comb(5, p) for p in range(6))
    second = sum((-1) ** p * p * (comb(5, p) - 6 * (comb(3, p - 1) if p >= 1 else 0)) for p in range(6))
    library = sum((-1) ** p * p * a1_bracket(p) for p in range(6)), sum((-1) ** p * p * binom(5, p) for p in range(6))
    passed = first == 0 and second == 0 and library == (0, 0)
    record(3, passed, f"sum (-1)^p p C(5,p) = {first}; sum (-1)^p p [C(5,p) - 6 C(3,p-1)] = {second} (exact)", t0)
    assert passed


def test_ac4_rotation_invariance():
    t0 = time.perf_counter()
    reports = [second_derivative_check(d) for d in ((0, 1), (0, 2), (1, 2))]
    d2 = max(r.max_abs for r in reports)
    lams = np.linspace(-3.0, 3.0, 61)
    f0 = max(abs(det_id_minus_T(0.0, lam, d) - (lam - 1) ** 4) for lam in lams for d in ((0, 1), (0, 2), (1, 2)))
    passed = d2 <= 1e-7 and f0 <= 1e-10
    record(4, passed, f"max |d^2/du^2 det(Id - T(u))|_0| = {d2:.1e} over 3 directions (tol 1e-7); "
                      f"max |f(lambda,0) - (lambda-1)^4| = {f0:.1e} (tol 1e-10)", t0)
    assert passed


def test_ac5_quadrature_oracles():
    t0 = time.perf_counter()
    gauss = integrate_signed(LogGaussIntegrand(1, 1.0, Polynomial.constant(1.0, 1)), tol=1e-12).value
    gauss_err = abs(gauss - math.sqrt(math.pi))
    radial = LogFactor(Polynomial.from_dict({(2, 0): 1.0, (0, 2): 1.0}), 2)
    rlog = integrate_signed(LogGaussIntegrand(2, 1.0, Polynomial.constant(1.0, 2), (radial,)), tol=1e-8).value
    rlog_err = abs(rlog + math.pi * np.euler_gamma)
    cases = [("GL2", M0_2, "trivial", 2), ("GL3", M1, "trivial", 5), ("GL3", M1, "subregular", 5),
             ("GL3", M0_3, "trivial", 5)]
    worst_z, n_checks = 0.0, 0
    for group, levi, label, d in cases:
        for kernel, t in ((EuclideanGaussian(1.0), 1.0), (GaussianKernel(d), 0.5)):
            spec = OrbitalSpec(group, levi, label, kernel, t)
            q = j_explicit(spec)
            mc = j_explicit_mc(spec, seed=0)
            sigma = math.hypot(mc.stderr, q.quad.error_estimate if q.quad is not None else 0.0)
            worst_z = max(worst_z, abs(q.value - mc.estimate) / sigma)
            n_checks += 1
    passed = gauss_err <= 1e-10 and rlog_err <= 1e-6 and worst_z <= 3.0
    record(5, passed, f"|int e^-x^2 - sqrt(pi)| = {gauss_err:.1e} (tol 1e-10); |radial log + pi gamma| = "
                      f"{rlog_err:.1e} (tol 1e-6); {n_checks} weight integrals vs MC: max |z| = {worst_z:.2f} "
                      f"(tol 3 sigma)", t0)
    assert passed


def _a0_cubic(p: int):
    nu = KRep.lambda_p(3, p)
    fn = lambda X: np.array([a0_coefficient(unipotent_gl3(0.0, y, z), nu) for y, z in X])
    return taylor_part(fn, 2, 3, radius=0.05, fit_degree=5, n_points=400)


def test_ac6_oddness_cancellation():
    t0 = time.perf_counter()
    r2 = lambda X: _kernels.r2_batch(unipotent_gl3(np.zeros(len(X)), X[:, 0], X[:, 1]))
    q3 = taylor_part(r2, 2, 3, radius=0.05, fit_degree=6, n_points=800)
    q4 = taylor_part(r2, 2, 4, radius=0.05, fit_degree=6, n_points=800)
    p1, _ = exponential_expansion_polynomials(q3, q4)
    radial = LogFactor(Polynomial.from_dict({(2, 0): 1.0, (0, 2): 1.0}), 2)
    worst = 0.0
    for p in range(6):
        a0_one = a0_coefficient(np.eye(3), KRep.lambda_p(3, p))
        cubic = polynomial_sum(_a0_cubic(p), polynomial_scale(p1, a0_one))
        top = coeff_cij(cubic, mode="top")
        logged = coeff_cij(cubic, [radial], mode="log")
        worst = max(worst, abs(top), abs(logged))
    passed = worst <= 1e-6
    record(6, passed, f"max |c13| over p = 0..5 (top-log and weighted modes) = {worst:.1e} (tol 1e-6)", t0)
    assert passed


def test_ac7_weight_scaling():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    s_values = np.exp(np.linspace(-2.0, 2.0, 17))
    worst, degrees = 0.0, []
    for M in (M0_2, M1, M0_3):
        datum = UnipotentDatum.trivial(M)
        for _ in range(3):
            fit = scaling_fit(datum.random_element(rng), s_values)
            worst = max(worst, fit.residual)
        degrees.append(fit.degree)
    passed = worst < 1e-6 and degrees == [1, 1, 2]
    record(7, passed, f"log-s polynomial fits of degree {degrees} for (GL2,M0), (GL3,M1), (GL3,M0): "
                      f"max residual {worst:.1e} (tol 1e-6)", t0)
    assert passed


def test_ac8_generic_weight_calibration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    pts3 = rng.standard_normal((100, 2))
    cal3 = calibrate(w_M_class_batch(UnipotentDatum.trivial(M1), pts3), np.log(np.sum(pts3 ** 2, axis=1)))
    pts2 = rng.standard_normal((100, 1))
    cal2 = calibrate(w_M_class_batch(UnipotentDatum.trivial(M0_2), pts2), np.log(np.abs(pts2[:, 0])))
    passed = cal3.residual < 1e-3 and cal2.residual < 1e-3
    record(8, passed, f"residuals GL3 M1 {cal3.residual:.1e} (c = {cal3.coefficients[0]:.6f}), GL2 M0 "
                      f"{cal2.residual:.1e} (c = {cal2.coefficients[0]:.6f}) over 100 points (tol 1e-3)", t0)
    assert passed


def test_ac9_expansion_fitting():
    t0 = time.perf_counter()
    m1 = OrbitalSpec("GL3", M1, "trivial", GaussianKernel(5))
    S1 = TraceSamples.from_rows(t_grid_values(m1, geometric_grid(1e-5, 1e-2, 32), tol=1e-11), "GL3 M1")
    fit1 = fit_expansion(S1, 5, 2, max_order=5, max_log_power=1)
    fit1_wide = fit_expansion(S1, 5, 2, max_order=2, max_log_power=2)
    eff = effective_exponent(S1, log_power=1, corrections=2)
    b3 = fit1.coefficient(3, 1)
    m0 = OrbitalSpec("GL3", M0_3, "trivial", GaussianKernel(5))
    S0 = TraceSamples.from_rows(t_grid_values(m0, geometric_grid(1e-5, 1e-2, 20), tol=1e-7), "GL3 M0")
    fit0 = fit_expansion(S0, 5, 3, max_order=2, max_log_power=2, group_rank=3)
    checks = {
        "exponent": abs(eff.exponent + 1.5) <= 0.02 and fit1.leading_exponent == -1.5,
        "M1 log-degree": fit1.log_degree <= 1 and fit1_wide.log_degree <= 1,
        "M0 log-degree": fit0.log_degree == 2,
        "b3": b3.zero_consistent,
    }
    passed = all(checks.values())
    record(9, passed, f"M1 free exponent {eff.exponent:.5f} (target -1.5 +- 0.02), log-degree {fit1.log_degree}"
                      f"/{fit1_wide.log_degree}; M0 log-degree {fit0.log_degree}; b3 = {b3.coefficient:.2e} +- "
                      f"{b3.stderr:.1e} zero-consistent={b3.zero_consistent}", t0)
    assert passed


def _series(rate: float, n_terms: int, log_power: int = 0, factor: float = 1.0):
    return {(2 * n, log_power): factor * (-rate) ** n / math.factorial(n) for n in range(n_terms)}


def test_ac10_zeta_pipeline():
    t0 = time.perf_counter()
    ss = np.linspace(-3.7, 4.3, 20)
    z1 = MellinZeta(expansion_from_coefficients(0, 0, _series(1.0, 12)), theta=lambda t: math.exp(-t))
    err1 = max(abs(z1(s) - 1.0) for s in ss)
    z2 = MellinZeta(expansion_from_coefficients(1, 0, _series(1.0, 12)), theta=lambda t: math.exp(-t) / math.sqrt(t))
    err2 = 0.0
    for s in ss + 0.013:
        exact = complex(mpmath.gamma(s - 0.5) * mpmath.rgamma(s))
        err2 = max(err2, abs(z2(s) - exact) / max(1.0, abs(exact)))
    zetas = []
    for p in range(6):
        co = _series(1.0, 10, log_power=1, factor=comb(5, p))
        co.update(_series(p + 1.0, 10))
        theta = lambda t, p=p: comb(5, p) * math.log(t) * math.exp(-t) + math.exp(-(p + 1) * t)
        zetas.append(MellinZeta(expansion_from_coefficients(0, 0, co), theta=theta))
    tor = finite_part_and_torsion(zetas)
    gap = abs(tor.finite_part - tor.derivative) if tor.derivative is not None else math.inf
    passed = err1 <= 1e-8 and err2 <= 1e-6 and gap <= 1e-8
    record(10, passed, f"e^-t: max |zeta - 1| = {err1:.1e} (tol 1e-8); t^-1/2 e^-t: max rel err {err2:.1e} "
                       f"(tol 1e-6); pole-cancelling example FP = {tor.finite_part:.12f}, d/ds = "
                       f"{tor.derivative:.12f}, gap {gap:.1e} (tol 1e-8)", t0)
    assert passed


def test_ac11_gl2_finite_order():
    t0 = time.perf_counter()
    worst = 0.0
    for theta in THETAS.values():
        for X in np.linspace(0.01, 0.1, 10):
            prof = elliptic_profile(theta, X)
            worst = max(worst, abs(prof.r2_kak / (8 * prof.alpha ** 2 * X ** 2) - 1))
    alpha2 = elliptic_alpha(THETAS[2])
    slope_ok = worst <= 0.02
    alpha_ok = alpha2 == math.sqrt(2)
    passed = slope_ok and alpha_ok
    record(11, passed, f"slope {'ok' if slope_ok else 'FAIL'}: max |r^2/(8 alpha^2 X^2) - 1| = {worst:.2e} for "
                       f"X <= 0.1 (tol 2%); alpha_2 {'ok' if alpha_ok else 'FAIL'}: measured {alpha2!r}, "
                       f"expected sqrt(2) = {math.sqrt(2)!r}", t0)
    assert slope_ok
    assert alpha_ok


if __name__ == "__main__":  # pragma: no cover
    import sys

    failures = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_ac") and callable(fn):
            try:
                fn()
            except AssertionError:
                failures += 1
    sys.exit(1 if failures else 0)
