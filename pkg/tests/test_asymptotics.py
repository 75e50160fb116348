from __future__ import annotations

import json
import math

import numpy as np
import pytest

from torsionlab import _kernels
from torsionlab.asymptotics import (
    C2Inputs,
    AsymptoticExpansion,
    TraceSamples,
    c2_assembly,
    coeff_cij,
    effective_exponent,
    expansion_from_coefficients,
    exponential_expansion_polynomials,
    fit_expansion,
    gaussian_polynomial_moment,
    geometric_grid,
    polynomial_product,
    synthesize,
    taylor_part,
)
from torsionlab.errors import IllConditionedError, UsageError
from torsionlab.heat import GaussianKernel, KRep, a0_coefficient, a1_identity_coefficient
from torsionlab.orbital import OrbitalSpec, t_grid_values, unipotent_gl3
from torsionlab.quadrature import LogFactor, Polynomial, log_moment_1d
from torsionlab.roots import LeviComposition

PI32 = math.pi ** 1.5


# -- synthetic round trips ----------------------------------------------------


def test_synthetic_round_trip():
    # t^{-3/2} (1 + 0.5 sqrt t + 2 log t)
    exact = expansion_from_coefficients(5, 2, {(0, 0): 1.0, (1, 0): 0.5, (0, 1): 2.0})
    samples = synthesize(exact, geometric_grid(1e-4, 1e-1, 30))
    fit = fit_expansion(samples, 5, 2, max_order=3, max_log_power=1)
    for term in fit.terms:
        target = {(0, 0): 1.0, (1, 0): 0.5, (0, 1): 2.0}.get((term.j, term.log_power), 0.0)
        assert term.coefficient == pytest.approx(target, abs=1e-8)
        assert term.zero_consistent == (target == 0.0)
    assert fit.leading_exponent == -1.5
    assert fit.log_degree == 1


def test_round_trip_with_log_squares():
    coeffs = {(0, 2): 0.3, (0, 1): -1.0, (0, 0): 2.0, (2, 2): 0.1, (1, 0): 0.7}
    exact = expansion_from_coefficients(5, 3, coeffs)
    samples = synthesize(exact, geometric_grid(1e-5, 1e-2, 40))
    fit = fit_expansion(samples, 5, 3, max_order=2, max_log_power=2, group_rank=3)
    for term in fit.terms:
        err = abs(term.coefficient - coeffs.get((term.j, term.log_power), 0.0))
        assert err <= term.stderr
        if term.j == 0:
            assert err <= 1e-8
    assert fit.log_degree == 2 and fit.leading_exponent == -1.0


def test_expansion_json_round_trip():
    exact = expansion_from_coefficients(5, 2, {(0, 0): 1.0, (3, 1): 0.0})
    back = AsymptoticExpansion.from_json(json.loads(exact.dumps()))
    assert back.to_json() == exact.to_json()
    assert back(0.01) == pytest.approx(exact(0.01))


def test_fit_preconditions():
    exact = expansion_from_coefficients(5, 2, {(0, 0): 1.0})
    short = synthesize(exact, geometric_grid(1e-3, 1e-1, 30))
    with pytest.raises(UsageError):
        fit_expansion(short, 5, 2, 2, 1)
    few = synthesize(exact, geometric_grid(1e-4, 1e-1, 8))
    with pytest.raises(UsageError):
        fit_expansion(few, 5, 2, 3, 1)
    ok = synthesize(exact, geometric_grid(1e-4, 1e-1, 40))
    with pytest.raises(UsageError):
        fit_expansion(ok, 5, 2, 2, 3, group_rank=3)
    with pytest.raises(IllConditionedError, match="extend the grid"):
        fit_expansion(ok, 5, 2, 9, 1, condition_limit=1e6)
    with pytest.raises(UsageError):
        TraceSamples([0.1, 0.01], [1.0, 2.0])


def test_condition_number_reported():
    exact = expansion_from_coefficients(5, 2, {(0, 0): 1.0, (0, 1): 1.0})
    fit = fit_expansion(synthesize(exact, geometric_grid(1e-4, 1e-1, 30)), 5, 2, 2, 1)
    assert 1.0 <= fit.condition < 1e12
    assert fit.notes


def test_effective_exponent_recovers_synthetic_exponent():
    exact = expansion_from_coefficients(5, 2, {(0, 0): 1.0, (0, 1): 0.4, (2, 0): 0.3})
    est = effective_exponent(synthesize(exact, geometric_grid(1e-5, 1e-2, 30)), log_power=1, corrections=2)
    assert est.exponent == pytest.approx(-1.5, abs=1e-6)


def test_gl2_surrogate_fit():
    # SL(2)/SO(2) has dimension 2; the unipotent domain has k = 1
    spec = OrbitalSpec("GL2", LeviComposition((1, 1)), "trivial", GaussianKernel(2))
    rows = t_grid_values(spec, geometric_grid(1e-5, 1e-2, 24), tol=1e-12)
    fit = fit_expansion(TraceSamples.from_rows(rows), 2, 1, max_order=3, max_log_power=1)
    assert fit.leading_exponent == -0.5
    assert fit.log_degree == 1
    # leading log coefficient: (1/2) int (4 pi)^{-1} e^{-x^2/2} dx
    assert fit.coefficient(0, 1).coefficient == pytest.approx(0.5 * math.sqrt(2 * math.pi) / (4 * math.pi), rel=1e-6)


# -- coefficients -----------------------------------------------------------------


def test_gaussian_moments():
    assert gaussian_polynomial_moment(Polynomial.constant(1.0, 3)) == pytest.approx(PI32)
    for i in range(3):
        for j in range(3):
            e = [0, 0, 0]
            e[i] += 1
            e[j] += 1
            val = gaussian_polynomial_moment(Polynomial.monomial(tuple(e)))
            assert val == pytest.approx(PI32 / 2 if i == j else 0.0, abs=1e-15)


def test_coeff_top_mode_is_moment_formula():
    p = Polynomial.from_dict({(2, 2): 1.0, (4, 0): 0.5})
    # int y^2 z^2 e^{-2|x|^2} + 0.5 int y^4 e^{-2|x|^2}
    g = lambda k: math.gamma((k + 1) / 2) * 2.0 ** (-(k + 1) / 2)
    assert coeff_cij(p, mode="top", a=2.0) == pytest.approx(g(2) ** 2 + 0.5 * g(4) * g(0), rel=1e-14)


def test_coeff_log_mode_matches_closed_form():
    val = coeff_cij(Polynomial.constant(1.0, 1), [LogFactor(Polynomial.monomial((1,)), 1)], mode="log")
    assert val == pytest.approx(log_moment_1d(), abs=1e-9)


def test_coeff_odd_polynomial_vanishes_in_both_modes():
    p = Polynomial.from_dict({(3, 0): 1.3, (1, 2): -0.4, (2, 1): 2.0})
    assert coeff_cij(p, mode="top") == 0.0
    radial = LogFactor(Polynomial.from_dict({(2, 0): 1.0, (0, 2): 1.0}), 2)
    assert abs(coeff_cij(p, [radial], mode="log")) <= 1e-8


def test_coeff_rejects_inhomogeneous():
    with pytest.raises(UsageError):
        coeff_cij(Polynomial.from_dict({(1, 0): 1.0, (0, 0): 1.0}), mode="top")
    with pytest.raises(UsageError):
        coeff_cij(Polynomial.monomial((2, 0)), mode="mixed")


def _a0(nu):
    return lambda X: np.array([a0_coefficient(unipotent_gl3(0.0, y, z), nu) for y, z in X])


@pytest.mark.parametrize("p", range(6))
def test_c13_cubic_taylor_part_is_odd_and_integrates_to_zero(p):
    cubic = taylor_part(_a0(KRep.lambda_p(3, p)), 2, 3, radius=0.05, fit_degree=5, n_points=400)
    X = np.random.default_rng(0).normal(size=(10, 2))
    np.testing.assert_allclose(cubic(-X), -cubic(X), atol=1e-14)
    assert abs(coeff_cij(cubic, mode="top")) <= 1e-6


def test_taylor_part_recovers_polynomial():
    f = lambda X: 1 + X[:, 0] - 2 * X[:, 0] * X[:, 1] + 0.25 * X[:, 1] ** 3
    cub = taylor_part(f, 2, 3)
    assert dict(cub.terms)[(0, 3)] == pytest.approx(0.25, abs=1e-8)
    assert abs(dict(cub.terms).get((3, 0), 0.0)) < 1e-8


def _r2(X):
    return _kernels.r2_batch(unipotent_gl3(X[:, 0], X[:, 1], X[:, 2]))


def test_r2_cubic_part_is_only_xyz():
    cubic = taylor_part(_r2, 3, 3, radius=0.05, fit_degree=6, n_points=3000)
    big = {e: c for e, c in cubic.terms if abs(c) > 1e-5}
    assert set(big) == {(1, 1, 1)}
    assert big[(1, 1, 1)] == pytest.approx(-2.0, abs=1e-4)


def _c2_inputs(p: int):
    nu = KRep.lambda_p(3, p)
    q3 = taylor_part(_r2, 3, 3, radius=0.05, fit_degree=6, n_points=3000)
    q4 = taylor_part(_r2, 3, 4, radius=0.05, fit_degree=6, n_points=3000)
    p1, p2 = exponential_expansion_polynomials(q3, q4)
    a0 = lambda x: a0_coefficient(unipotent_gl3(*x), nu)
    h = 1e-3
    grad = np.zeros(3)
    hess = np.zeros((3, 3))
    E = np.eye(3)
    for i in range(3):
        grad[i] = (a0(h * E[i]) - a0(-h * E[i])) / (2 * h)
        for j in range(3):
            hess[i, j] = (a0(h * (E[i] + E[j])) - a0(h * (E[i] - E[j])) - a0(h * (E[j] - E[i])) + a0(-h * (E[i] + E[j]))) / (4 * h * h)
    return C2Inputs(a0(np.zeros(3)), a1_identity_coefficient(p), p1, p2, grad, hess)


@pytest.mark.parametrize("p", [0, 2, 5])
def test_c2_parity_elimination(p):
    res = c2_assembly(_c2_inputs(p))
    assert abs(res.terms["grad_p1"]) <= 1e-10
    assert abs(res.terms["hess_mixed"]) <= 1e-10
    assert res.full == pytest.approx(res.reduced, abs=1e-9)
    assert res.terms["a1"] == pytest.approx(a1_identity_coefficient(p) * PI32)


def test_exponential_expansion_polynomials():
    q3 = Polynomial.monomial((1, 1, 1), -2.0)
    q4 = Polynomial.monomial((4, 0, 0), 1.0)
    p1, p2 = exponential_expansion_polynomials(q3, q4)
    assert dict(p1.terms) == {(1, 1, 1): 0.5}
    square = dict(polynomial_product(q3, q3).terms)
    assert square == {(2, 2, 2): 4.0}
    assert dict(p2.terms) == {(4, 0, 0): -0.25, (2, 2, 2): 4.0 / 32}


def test_c2_validates_shapes():
    with pytest.raises(UsageError):
        c2_assembly(C2Inputs(1.0, 1.0, Polynomial((), 3), Polynomial.constant(1.0, 3), np.zeros(2), np.zeros((3, 3))))
