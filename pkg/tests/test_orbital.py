from __future__ import annotations

import json
import math

import mpmath
import numpy as np
import pytest

from torsionlab.errors import UsageError
from torsionlab.geometry import explicit_r2_unipotent
from torsionlab.heat import GaussianKernel, ParametrixKernel
from torsionlab.orbital import (
    EXPLICIT_WEIGHTS,
    THETAS,
    EuclideanGaussian,
    OrbitalSpec,
    elliptic_alpha,
    elliptic_conjugate,
    elliptic_profile,
    gl3_finite_element,
    j_explicit,
    j_explicit_mc,
    j_finite_order_gl2,
    j_finite_order_gl2_mc,
    j_finite_order_gl3,
    j_generic,
    j_invariant,
    j_invariant_mc,
    read_t_grid_csv,
    rotation,
    shifted_weight_vector,
    t_grid_values,
    write_t_grid_csv,
)
from torsionlab.quadrature import log_moment_1d
from torsionlab.roots import LeviComposition

GAMMA = float(mpmath.euler)
SQRT_PI = math.sqrt(math.pi)
I1 = log_moment_1d()
# int e^{-x^2} log^2|x| dx
I2 = SQRT_PI / 4 * (math.pi ** 2 / 2 + (GAMMA + 2 * math.log(2)) ** 2)

LABELS = {
    "gl2_m0": ("GL2", (1, 1), "trivial"),
    "gl3_m1_trivial": ("GL3", (2, 1), "trivial"),
    "gl3_m1_subregular": ("GL3", (2, 1), "subregular"),
    "gl3_m0": ("GL3", (1, 1, 1), "trivial"),
}
GAUSSIAN_CLOSED_FORMS = {
    "gl2_m0": I1,
    "gl3_m1_trivial": -math.pi * GAMMA,
    "gl3_m1_subregular": 2 * math.pi * I1,
    "gl3_m0": SQRT_PI * I1 ** 2 + 2 * math.pi * I2,
}


def spec(name, kernel=None, t=None, constants=None):
    group, levi, label = LABELS[name]
    return OrbitalSpec(group, LeviComposition(levi), label, kernel or EuclideanGaussian(), t, constants or {})


def surrogate(r2, t):
    return (4 * mpmath.pi * t) ** mpmath.mpf(-2.5) * mpmath.exp(-r2 / (4 * t))


# -- oracles ----------------------------------------------------------------


def test_log_square_moment_oracle():
    ref = mpmath.quad(lambda u: 2 * mpmath.exp(-u * u) * mpmath.log(u) ** 2, [0, 1, mpmath.inf])
    assert I2 == pytest.approx(float(ref), rel=1e-14)


def test_catalog_terms_match_pointwise_weights():
    rng = np.random.default_rng(0)
    for w in EXPLICIT_WEIGHTS.values():
        X = rng.normal(size=(50, w.dim))
        total = sum(c * I.values(X, signed=True) * np.exp(np.sum(X * X, axis=1)) for c, I in w.integrands(1.0))
        np.testing.assert_allclose(total, w.pointwise(X), rtol=1e-12, atol=1e-12)


# -- Euclidean Gaussian kernel ------------------------------------------------


@pytest.mark.parametrize("name", sorted(GAUSSIAN_CLOSED_FORMS))
def test_gaussian_weight_integrals_closed_form(name):
    res = j_explicit(spec(name))
    assert res.value == pytest.approx(GAUSSIAN_CLOSED_FORMS[name], abs=1e-6)


@pytest.mark.parametrize("name,seed", [("gl2_m0", 11), ("gl3_m1_trivial", 12), ("gl3_m1_subregular", 13), ("gl3_m0", 14)])
def test_gaussian_weight_integrals_against_monte_carlo(name, seed):
    q = j_explicit(spec(name))
    mc = j_explicit_mc(spec(name), seed=seed)
    assert abs(q.value - mc.estimate) <= 3 * math.hypot(mc.stderr, q.quad.error_estimate)


@pytest.mark.parametrize("t", [0.01, 0.3, 2.0])
def test_gaussian_t_scaling_gl2(t):
    # int e^{-x^2/t} log|x| dx = sqrt(t) (I_1 + sqrt(pi) log(t)/2)
    res = j_explicit(spec("gl2_m0", t=t), tol=1e-12)
    assert res.value == pytest.approx(math.sqrt(t) * (I1 + SQRT_PI * math.log(t) / 2), rel=1e-9)


@pytest.mark.parametrize("t", [0.05, 0.5])
def test_gaussian_t_scaling_m1(t):
    # k = 2, degree 2 logarithm: t (-pi gamma + pi log t)
    res = j_explicit(spec("gl3_m1_trivial", t=t))
    assert res.value == pytest.approx(t * (-math.pi * GAMMA + math.pi * math.log(t)), rel=1e-8)


def test_global_constant_multiplies():
    base = j_explicit(spec("gl3_m1_trivial")).value
    assert j_explicit(spec("gl3_m1_trivial", constants={"c": 2.5})).value == pytest.approx(2.5 * base, rel=1e-12)


def test_invariant_gaussian_integrals():
    s = OrbitalSpec("GL3", LeviComposition((3,)), "3", EuclideanGaussian(2.0))
    assert j_invariant(s).value == pytest.approx((math.pi / 2) ** 1.5)
    s = OrbitalSpec("GL3", LeviComposition((3,)), "1,1,1")
    assert j_invariant(s).value == 1.0


# -- kernels on the group -------------------------------------------------------


def test_radial_kernel_gl2_matches_one_dimensional_oracle():
    t = 0.2
    res = j_explicit(spec("gl2_m0", GaussianKernel(5), t))
    ref = 2 * mpmath.quad(
        lambda x: surrogate(mpmath.mpf(explicit_r2_unipotent(float(x))), t) * mpmath.log(x), [0, 0.5, 2, 10, 60]
    )
    assert res.value == pytest.approx(float(ref), rel=1e-8)


def _m1_radial_oracle(t, weight):
    # r^2(u(0, y, z)) = 8 asinh^2(rho/2) with rho^2 = y^2 + z^2
    f = lambda rho: surrogate(8 * mpmath.asinh(rho / 2) ** 2, t) * weight(rho) * rho
    return float(2 * mpmath.pi * mpmath.quad(f, [0, 0.5, 2, 10, 200]))


def test_radial_kernel_m1_matches_polar_oracle():
    t = 0.1
    res = j_explicit(spec("gl3_m1_trivial", GaussianKernel(5), t))
    assert res.value == pytest.approx(_m1_radial_oracle(t, lambda r: mpmath.log(r * r)), rel=1e-7)


@pytest.mark.parametrize("name,seed", [("gl2_m0", 21), ("gl3_m1_trivial", 22)])
def test_radial_kernel_against_monte_carlo(name, seed):
    s = spec(name, GaussianKernel(5), 0.1)
    q = j_explicit(s)
    mc = j_explicit_mc(s, seed=seed, n_samples=400_000)
    assert abs(q.value - mc.estimate) <= 3 * math.hypot(mc.stderr, q.quad.error_estimate)


def test_invariant_radial_against_monte_carlo():
    s = OrbitalSpec("GL3", LeviComposition((3,)), "2,1", GaussianKernel(5), 0.1)
    q = j_invariant(s)
    assert q.value == pytest.approx(_m1_radial_oracle(0.1, lambda r: 1), rel=1e-8)
    mc = j_invariant_mc(s, seed=5, n_samples=400_000)
    assert abs(q.value - mc.estimate) <= 3 * mc.stderr


def test_sign_conjugation_invariance():
    k = np.diag([-1.0, 1.0, 1.0])
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 3))
    w = EXPLICIT_WEIGHTS["gl3_m0"]
    G = w.embed(X)
    Gk = k @ G @ k
    flipped = X * np.array([-1.0, -1.0, 1.0])
    np.testing.assert_allclose(w.embed(flipped), Gk)
    np.testing.assert_allclose(w.pointwise(flipped), w.pointwise(X))
    K = GaussianKernel(5)
    np.testing.assert_allclose(K.evaluate(Gk, 0.3), K.evaluate(G, 0.3), rtol=1e-12)


def test_parametrix_kernel_is_vector_valued():
    s = spec("gl3_m1_trivial", ParametrixKernel(ps=(0, 1, 2)), 0.05)
    res = j_explicit(s, tol=1e-6)
    assert np.shape(res.value) == (3,)
    assert np.all(np.isfinite(res.value))


# -- generic weights ------------------------------------------------------------


def test_generic_weight_integral_gl2():
    # w = 2 + sqrt2 log(2|x|)
    res = j_generic(spec("gl2_m0"))
    ref = 2 * SQRT_PI + math.sqrt(2) * (I1 + math.log(2) * SQRT_PI)
    assert res.value == pytest.approx(ref, abs=1e-6)


def test_generic_weight_integral_m1():
    # w = 2 + sqrt(3/2) (log(y^2+z^2)/2 + log 2)
    res = j_generic(spec("gl3_m1_trivial"))
    c = math.sqrt(1.5)
    ref = 2 * math.pi + c * (-math.pi * GAMMA / 2 + math.log(2) * math.pi)
    assert res.value == pytest.approx(ref, abs=1e-5)


def test_generic_weight_needs_trivial_x0():
    with pytest.raises(UsageError):
        j_generic(spec("gl3_m1_subregular"))


# -- finite-order classes -----------------------------------------------------------


@pytest.mark.parametrize("i", [2, 3])
def test_elliptic_kak_parameter(i):
    theta = THETAS[i]
    for X in (0.01, 0.05, 0.1, 0.7):
        p = elliptic_profile(theta, X)
        assert math.sinh(p.Y) == pytest.approx(math.sin(theta) * math.sinh(2 * X), rel=1e-12)
        assert p.r2_geodesic == pytest.approx(8 * p.Y ** 2, rel=1e-10)
    assert elliptic_alpha(theta) == pytest.approx(math.sin(theta), rel=1e-12)


@pytest.mark.parametrize("i", [2, 3])
def test_elliptic_slope_check(i):
    alpha = elliptic_alpha(THETAS[i])
    for X in np.linspace(0.005, 0.1, 12):
        p = elliptic_profile(THETAS[i], X)
        # squared KAK norm 2 Y^2 against 8 alpha^2 X^2
        assert p.r2_kak / (8 * alpha ** 2 * X ** 2) == pytest.approx(1.0, abs=0.02)


def test_elliptic_conjugate_matrix():
    theta, X = THETAS[3], 0.4
    a = np.diag([math.exp(X), math.exp(-X)])
    direct = np.linalg.inv(a) @ rotation(theta) @ a
    np.testing.assert_allclose(elliptic_conjugate(theta, X), direct, atol=1e-14)


def test_gl2_sigma1_matches_mc_and_oracle():
    t = 0.1
    s = OrbitalSpec("GL2", LeviComposition((1, 1)), "sigma1", GaussianKernel(5), t, {"a1": 1.0, "a2": 0.5})
    res = j_finite_order_gl2(s)
    ref = 2 * mpmath.quad(
        lambda x: surrogate(mpmath.mpf(explicit_r2_unipotent(float(x))), t) * (mpmath.log(1 + x * x) + 0.5),
        [0, 0.5, 2, 10, 60],
    )
    assert res.value == pytest.approx(float(ref), rel=1e-8)
    mc = j_finite_order_gl2_mc(s, seed=3)
    assert abs(res.value - mc.estimate) <= 3 * mc.stderr


@pytest.mark.parametrize("label", ["sigma2+", "sigma3+"])
def test_gl2_elliptic_matches_oracle(label):
    t = 0.1
    theta = THETAS[int(label[5])]
    s = OrbitalSpec("GL2", LeviComposition((1, 1)), label, GaussianKernel(5), t, {label[:6].replace("sigma", "a"): 2.0})
    res = j_finite_order_gl2(s)
    f = lambda X: surrogate(8 * mpmath.asinh(mpmath.sin(theta) * mpmath.sinh(2 * X)) ** 2, t) * mpmath.sinh(2 * X)
    ref = 2 * mpmath.quad(f, [0, 0.2, 1, 4])
    assert res.value == pytest.approx(float(ref), rel=1e-8)
    minus = j_finite_order_gl2(OrbitalSpec("GL2", LeviComposition((1, 1)), label[:-1] + "-", GaussianKernel(5), t,
                                           {label[:6].replace("sigma", "a"): 2.0}))
    assert minus.value == pytest.approx(res.value, rel=1e-12)
    mc = j_finite_order_gl2_mc(s, seed=4)
    assert abs(res.value - mc.estimate) <= 3 * mc.stderr


@pytest.mark.parametrize("theta", [THETAS[2], THETAS[3]])
def test_shifted_weight_closed_form_at_identity(theta):
    rng = np.random.default_rng(2)
    xy = rng.normal(size=(20, 2))
    w = shifted_weight_vector(rotation(theta), xy)
    np.testing.assert_allclose(np.linalg.norm(w, axis=1), np.linalg.norm(xy, axis=1) / (2 * abs(math.sin(theta / 2))))


def test_shifted_weight_singular():
    with pytest.raises(Exception):
        shifted_weight_vector(np.eye(2), np.ones((1, 2)))


def test_gl3_finite_elements():
    g = gl3_finite_element("sigma3-+")
    np.testing.assert_allclose(g[:2, :2], -rotation(THETAS[3]))
    assert g[2, 2] == -1.0
    np.testing.assert_allclose(gl3_finite_element("sigma1-"), -np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(UsageError):
        gl3_finite_element("sigma4++")


def test_gl3_sigma1_invariant_equals_unipotent_integral():
    # f(sigma_1 u) = f(u) for radial f, so J_G(sigma_1) is the V = {u(0,y,z)} integral
    k = GaussianKernel(5)
    a = j_finite_order_gl3(OrbitalSpec("GL3", LeviComposition((3,)), "sigma1+", k, 0.1)).value
    b = j_invariant(OrbitalSpec("GL3", LeviComposition((3,)), "2,1", k, 0.1)).value
    assert a == pytest.approx(b, rel=1e-8)


def test_gl3_sigma1_weighted_matches_polar_oracle():
    t = 0.1
    res = j_finite_order_gl3(OrbitalSpec("GL3", LeviComposition((2, 1)), "sigma1-", GaussianKernel(5), t))
    assert res.value == pytest.approx(_m1_radial_oracle(t, lambda r: mpmath.log(1 + r * r)), rel=1e-7)


@pytest.mark.parametrize("label", ["sigma2++", "sigma3-+"])
def test_gl3_elliptic_integrals_converge_positive(label):
    for blocks in ((2, 1), (3,)):
        res = j_finite_order_gl3(OrbitalSpec("GL3", LeviComposition(blocks), label, GaussianKernel(5), 0.1))
        assert res.quad.converged
        assert res.value > 0


def test_gl3_elliptic_unweighted_matches_oracle():
    # M = G: Gauss-Legendre product rule in polar coordinates on (x, y)
    t = 0.1
    theta = THETAS[2]
    res = j_finite_order_gl3(OrbitalSpec("GL3", LeviComposition((3,)), "sigma2++", GaussianKernel(5), t))
    nodes, weights = np.polynomial.legendre.leggauss(80)
    X, wX = 0.75 * (nodes + 1), 0.75 * weights
    rho, wr = 1.5 * (nodes + 1), 1.5 * weights
    phi = 2 * math.pi * np.arange(32) / 32
    XX, RR, PP = np.meshgrid(X, rho, phi, indexing="ij")
    W = np.einsum("i,j->ij", wX, wr)[..., None] * (2 * math.pi / 32)
    G = np.zeros(XX.shape + (3, 3))
    G[..., :2, :2] = elliptic_conjugate(theta, XX)
    G[..., 2, 2] = 1.0
    U = np.broadcast_to(np.eye(3), XX.shape + (3, 3)).copy()
    U[..., 0, 2], U[..., 1, 2] = RR * np.cos(PP), RR * np.sin(PP)
    G = G @ U
    r2 = np.sum(np.log(np.linalg.eigvalsh(np.swapaxes(G, -1, -2) @ G)) ** 2, axis=-1)
    vals = (4 * math.pi * t) ** -2.5 * np.exp(-r2 / (4 * t)) * np.sinh(2 * XX) * RR
    assert res.value == pytest.approx(float(np.sum(W * vals)), rel=1e-5)


def test_gl3_m0_sigma1_linear_part():
    k = GaussianKernel(5)
    base = OrbitalSpec("GL3", LeviComposition((1, 1, 1)), "sigma1+", k, 0.1, {"c_a": 0.0, "c_0": 1.0})
    plain = OrbitalSpec("GL3", LeviComposition((1, 1, 1)), "sigma1+", k, 0.1, {"c_a": 0.0, "c_0": 0.0})
    inv = OrbitalSpec("GL3", LeviComposition((3,)), "sigma1+u1", k, 0.1)
    # c_0 adds the unweighted U_0 integral, which equals the regular invariant integral since f(sigma_1 u) = f(u)
    full = j_finite_order_gl3(base).value - j_finite_order_gl3(plain).value
    unweighted = j_invariant(OrbitalSpec("GL3", LeviComposition((3,)), "3", k, 0.1)).value
    assert full == pytest.approx(unweighted, rel=1e-5)
    assert j_finite_order_gl3(inv).value > 0


def test_finite_order_needs_group_kernel():
    with pytest.raises(UsageError):
        j_finite_order_gl3(OrbitalSpec("GL3", LeviComposition((2, 1)), "sigma2++"))


# -- specs, grids, CSV --------------------------------------------------------------


def test_spec_json_roundtrip():
    s = spec("gl3_m0", GaussianKernel(5), 0.25, {"c": 3.0})
    back = OrbitalSpec.from_json(json.loads(json.dumps(s.to_json())))
    assert back.to_json() == s.to_json()


def test_spec_validation():
    with pytest.raises(UsageError):
        OrbitalSpec("GL3", LeviComposition((1, 1)), "trivial")
    with pytest.raises(UsageError):
        OrbitalSpec("GL3", LeviComposition((2, 1)), "regular")
    with pytest.raises(UsageError):
        OrbitalSpec("GL2", LeviComposition((1, 1)), "trivial", t=-1.0)
    with pytest.raises(UsageError):
        EuclideanGaussian(0.0)
    with pytest.raises(UsageError):
        OrbitalSpec.from_json({"group": "GL2"})


def test_t_grid_is_deterministic_across_workers(tmp_path):
    s = spec("gl3_m1_trivial", GaussianKernel(5))
    ts = [0.3, 0.05, 0.1]
    serial = t_grid_values(s, ts, workers=1)
    parallel = t_grid_values(s, ts, workers=2)
    assert [t for t, _ in serial] == ts
    assert serial == parallel
    path = tmp_path / "grid.csv"
    write_t_grid_csv(path, serial)
    back = read_t_grid_csv(path)
    assert [t for t, _ in back] == ts
    assert [float(v[0]) for _, v in back] == [v for _, v in serial]
