"""Mellin-transform zeta functions, Laurent data and the torsion combination.

For a trace ``theta(t)`` with small-time expansion ``sum c t^alpha (log t)^i``
on ``(0, 1]`` and exponential decay on ``[1, oo)``,

    zeta(s) = Gamma(s)^{-1} [ sum c (-1)^i i! / (s + alpha)^{i+1}
                              + int_0^1 (theta - expansion) t^{s-1} dt
                              + int_1^oo theta t^{s-1} dt ],

which continues ``zeta`` meromorphically to every ``s`` where the remainder
integral converges.  Laurent coefficients at a point are assembled from the
Taylor series of ``1/Gamma`` and of the regular part of the bracket.
"""

from __future__ import annotations

import cmath
import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import mpmath
import numpy as np
from scipy import integrate, optimize

from .asymptotics import AsymptoticExpansion, ExpansionTerm
from .errors import InconsistentLaurentError, NumericalError, UsageError, ZetaPoleError

QUAD_EPSABS = 1e-14
QUAD_EPSREL = 1e-12
POLE_TOL = 1e-9


def _cquad(f: Callable[[float], complex], a: float, b: float) -> complex:
    opts = dict(limit=400, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL)
    re, _ = integrate.quad(lambda t: f(t).real, a, b, **opts)
    im, _ = integrate.quad(lambda t: f(t).imag, a, b, **opts)
    return complex(re, im)


# ---------------------------------------------------------------------------
# tails


@dataclass(frozen=True)
class ExponentialTail:
    """``theta(t) = sum_m c_m exp(-mu_m t)`` on ``[1, oo)`` with every ``mu_m > 0``."""

    coefficients: tuple[float, ...]
    rates: tuple[float, ...]
    residual: float = 0.0

    def __post_init__(self):
        if len(self.coefficients) != len(self.rates) or not self.rates:
            raise UsageError("tail model needs matching non-empty coefficients and rates")
        if min(self.rates) <= 0:
            raise NumericalError("fitted tail is not exponentially decaying")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return sum(c * np.exp(-mu * t) for c, mu in zip(self.coefficients, self.rates))

    def mellin_upper(self, s: complex) -> complex:
        """``int_1^oo theta(t) t^{s-1} dt = sum c mu^{-s} Gamma(s, mu)``."""
        return complex(sum(c * mpmath.power(mu, -s) * mpmath.gammainc(s, mu) for c, mu in zip(self.coefficients,
                                                                                             self.rates)))

    def to_json(self) -> dict:
        return {"coefficients": list(self.coefficients), "rates": list(self.rates), "residual": self.residual}


def fit_exponential_tail(ts, values, max_terms: int = 3, rel_tol: float = 1e-10) -> ExponentialTail:
    """Least-squares fit of ``sum_{m<=M} c_m exp(-mu_m t)`` on ``t >= 1``; smallest ``M`` reaching ``rel_tol``.

    The rates are parametrised as ``exp(log mu)`` so they stay positive; the
    best model over ``M <= max_terms`` is returned when none reaches ``rel_tol``.
    """
    ts = np.asarray(ts, dtype=float)
    y = np.asarray(values, dtype=float)
    if np.any(ts < 1):
        raise UsageError("tail samples must lie in [1, oo)")
    if len(ts) < 2 * max_terms + 1:
        raise UsageError("too few tail samples")
    w = 1.0 / np.maximum(np.abs(y), np.finfo(float).tiny)
    best = None
    # initial rate from the log-slope
    slope = -np.polyfit(ts, np.log(np.maximum(np.abs(y), 1e-300)), 1)[0]
    if not slope > 0:
        raise NumericalError("tail samples do not decay")
    for m in range(1, max_terms + 1):
        log_mu0 = np.log(slope) + np.arange(m) * 0.7

        def model(params):
            lm = params[:m]
            E = np.exp(-np.exp(lm)[None, :] * ts[:, None])
            c, *_ = np.linalg.lstsq(E * w[:, None], y * w, rcond=None)
            return E, c

        def resid(lm):
            E, c = model(lm)
            return (E @ c - y) * w

        sol = optimize.least_squares(resid, log_mu0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        E, c = model(sol.x)
        r = float(np.max(np.abs(resid(sol.x))))
        cand = ExponentialTail(tuple(float(v) for v in c), tuple(float(v) for v in np.exp(sol.x)), r)
        if best is None or r < best.residual:
            best = cand
        if r <= rel_tol:
            return cand
    return best


# ---------------------------------------------------------------------------
# Laurent data


@dataclass
class LaurentData:
    """``zeta(s) = sum_n coefficients[n] (s - center)^n`` near ``center``."""

    center: complex
    coefficients: dict[int, complex]
    notes: list[str] = field(default_factory=list)

    def coefficient(self, n: int) -> complex:
        return self.coefficients.get(n, 0j)

    def pole_order(self, tol: float = POLE_TOL) -> int:
        neg = [n for n, c in self.coefficients.items() if n < 0 and abs(c) > tol]
        return -min(neg) if neg else 0

    def principal_part(self) -> dict[int, complex]:
        return {n: c for n, c in self.coefficients.items() if n < 0}

    def to_json(self) -> dict:
        return {
            "center": [self.center.real, self.center.imag] if isinstance(self.center, complex) else [self.center, 0.0],
            "coefficients": {str(n): [complex(c).real, complex(c).imag] for n, c in sorted(self.coefficients.items())},
            "notes": list(self.notes),
        }

    @classmethod
    def from_json(cls, data: dict) -> "LaurentData":
        try:
            center = complex(*data["center"])
            coeffs = {int(n): complex(*v) for n, v in data["coefficients"].items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise InconsistentLaurentError(f"invalid Laurent data: {exc}") from exc
        return cls(center, coeffs, list(data.get("notes", [])))


def _rgamma_taylor(s0: complex, order: int) -> list[complex]:
    return [complex(c) for c in mpmath.taylor(mpmath.rgamma, mpmath.mpc(s0), order)]


# ---------------------------------------------------------------------------
# zeta functions


class MellinZeta:
    """``zeta(s)`` of a trace given by its small-time expansion and its values.

    ``theta`` evaluates the trace on ``(0, oo)``; on ``(0, 1]`` it is only
    used for the remainder ``theta - expansion`` (omitted when ``theta`` is
    None, which treats the expansion as exact there).  ``tail`` replaces
    ``theta`` on ``[1, oo)`` when given (a callable or an
    :class:`ExponentialTail`).
    """

    def __init__(self, expansion: AsymptoticExpansion | Sequence[ExpansionTerm] | None = None,
                 theta: Callable[[float], float] | None = None, tail=None):
        if isinstance(expansion, AsymptoticExpansion):
            terms = list(expansion.terms)
        else:
            terms = list(expansion or [])
        self.terms = [tm for tm in terms if tm.coefficient != 0.0]
        self.theta = theta
        self.tail = tail
        self._cut: float | None = None
        if theta is None and tail is None:
            raise UsageError("need theta or a tail model for the integral over [1, oo)")

    # -- pieces of the bracket --------------------------------------------

    def _expansion_value(self, t: float) -> float:
        lt = math.log(t)
        return sum(tm.coefficient * t ** tm.exponent * lt ** tm.log_power for tm in self.terms)

    def remainder_cut(self) -> float:
        """Largest ``t`` of the grid ``10^{-q/8}`` below which ``theta - expansion`` is at roundoff level.

        Below it the remainder is indistinguishable from cancellation noise
        (``64 eps`` times the size of the summands); it is set to 0 there,
        which costs ``O(noise * cut^{Re s})``.
        """
        if self._cut is None:
            eps = np.finfo(float).eps
            cut = 0.0
            for q in range(0, 129):
                t = 10.0 ** (-q / 8)
                lt = math.log(t)
                size = abs(self.theta(t)) + sum(abs(tm.coefficient * t ** tm.exponent * lt ** tm.log_power)
                                                for tm in self.terms)
                if abs(self.theta(t) - self._expansion_value(t)) <= 64 * eps * size:
                    cut = t
                    break
            self._cut = cut
        return self._cut

    def _remainder_moment(self, s: complex, m: int = 0) -> complex:
        """``int_0^1 (theta - expansion)(t) (log t)^m t^{s-1} dt``."""
        if self.theta is None:
            return 0j
        theta = self.theta
        cut = self.remainder_cut()
        if cut >= 1.0:
            return 0j
        return _cquad(lambda t: (theta(t) - self._expansion_value(t)) * math.log(t) ** m * t ** (s - 1), cut, 1.0)

    def _tail_moment(self, s: complex, m: int = 0) -> complex:
        """``int_1^oo theta(t) (log t)^m t^{s-1} dt``."""
        if isinstance(self.tail, ExponentialTail) and m == 0:
            return self.tail.mellin_upper(s)
        f = self.tail if self.tail is not None else self.theta
        return _cquad(lambda t: complex(f(t)) * math.log(t) ** m * t ** (s - 1), 1.0, math.inf)

    def pole_candidates(self) -> list[float]:
        return sorted({-tm.exponent for tm in self.terms})

    def _near_candidate(self, s: complex, tol: float = 1e-12) -> float | None:
        for p in self.pole_candidates():
            if abs(s - p) < tol:
                return p
        return None

    def bracket(self, s: complex) -> complex:
        """``Gamma(s) zeta(s)``."""
        s = complex(s)
        if self._near_candidate(s) is not None:
            raise ZetaPoleError(f"the bracket is singular at s={s}", self.laurent(s.real))
        total = sum(tm.coefficient * (-1) ** tm.log_power * math.factorial(tm.log_power)
                    / (s + tm.exponent) ** (tm.log_power + 1) for tm in self.terms)
        return complex(total) + self._remainder_moment(s) + self._tail_moment(s)

    def __call__(self, s: complex) -> complex:
        s = complex(s)
        p = self._near_candidate(s)
        if p is not None:
            lau = self.laurent(p)
            if lau.pole_order() > 0:
                raise ZetaPoleError(f"zeta has a pole of order {lau.pole_order()} at s={p:g}", lau)
            return lau.coefficient(0)
        return complex(mpmath.rgamma(s)) * self.bracket(s)

    def direct(self, s: complex) -> complex:
        """``Gamma(s)^{-1} int_0^oo theta t^{s-1} dt`` by quadrature (for ``Re s`` in the convergence range)."""
        if self.theta is None:
            raise UsageError("the direct Mellin integral needs theta")
        f = self.theta
        head = _cquad(lambda t: f(t) * t ** (s - 1), 0.0, 1.0)
        tail = _cquad(lambda t: f(t) * t ** (s - 1), 1.0, math.inf)
        return complex(mpmath.rgamma(s)) * (head + tail)

    def laurent(self, s0: float, order: int = 2) -> LaurentData:
        """Laurent coefficients of ``zeta`` at ``s0`` from ``n = -(pole order)`` through ``n = order``."""
        s0 = float(s0)
        hit = [tm for tm in self.terms if abs(-tm.exponent - s0) < 1e-12]
        rest = [tm for tm in self.terms if tm not in hit]
        top = max((tm.log_power + 1 for tm in hit), default=0)
        # bracket = sum_n b_n (s - s0)^n
        b: dict[int, complex] = {}
        for tm in hit:
            n = -(tm.log_power + 1)
            b[n] = b.get(n, 0j) + tm.coefficient * (-1) ** tm.log_power * math.factorial(tm.log_power)
        reg_order = order + top
        for m in range(reg_order + 1):
            val = 0j
            for tm in rest:
                i = tm.log_power
                val += (tm.coefficient * (-1) ** i * math.factorial(i) * (-1) ** m * math.factorial(i + m)
                        / math.factorial(i) / (s0 + tm.exponent) ** (i + 1 + m)) / math.factorial(m)
            val += (self._remainder_moment(s0, m) + self._tail_moment(s0, m)) / math.factorial(m)
            b[m] = b.get(m, 0j) + val
        p = _rgamma_taylor(s0, reg_order + top + 1)
        coeffs: dict[int, complex] = {}
        for n in range(-top, order + 1):
            coeffs[n] = sum(p[a] * b.get(n - a, 0j) for a in range(len(p)) if (n - a) in b)
        return LaurentData(complex(s0), coeffs)


def write_zeta_table(target, zeta: Callable[[complex], complex], s_values: Sequence[float]) -> None:
    """CSV with columns ``s, re_zeta, im_zeta``; ``target`` is a path or an open text stream."""
    if hasattr(target, "write"):
        _zeta_rows(target, zeta, s_values)
        return
    with open(target, "w", newline="") as fh:
        _zeta_rows(fh, zeta, s_values)


def _zeta_rows(fh, zeta, s_values) -> None:
    writer = csv.writer(fh)
    writer.writerow(["s", "re_zeta", "im_zeta"])
    for s in s_values:
        z = zeta(s)
        writer.writerow([repr(float(s)), repr(z.real), repr(z.imag)])


# ---------------------------------------------------------------------------
# finite parts and torsion


@dataclass
class TorsionResult:
    """``log T`` by the finite-part definition and, when the combination is pole-free, by differentiation."""

    finite_part: float
    derivative: float | None
    pole_free: bool
    combination: LaurentData
    notes: list[str] = field(default_factory=list)

    @property
    def agree(self) -> bool | None:
        if self.derivative is None:
            return None
        return abs(self.finite_part - self.derivative) <= 1e-8 * max(1.0, abs(self.finite_part))

    def to_json(self) -> dict:
        return {
            "log_T_finite_part": self.finite_part,
            "log_T_derivative": self.derivative,
            "pole_free": self.pole_free,
            "combination": self.combination.to_json(),
            "notes": list(self.notes),
        }


def _contour_radius(zetas: Sequence[MellinZeta]) -> float:
    others = [abs(p) for z in zetas for p in z.pole_candidates() if abs(p) > 1e-12]
    return min([0.5] + [0.5 * d for d in others])


def contour_derivative_at_zero(Z: Callable[[complex], complex], radius: float, n_points: int = 48):
    """``(a_{-1}, a_1)`` of ``Z`` at 0 by the trapezoid rule on ``|s| = radius``."""
    phi = 2 * math.pi * (np.arange(n_points) + 0.5) / n_points
    vals = np.array([Z(radius * cmath.exp(1j * f)) for f in phi])
    e = np.exp(1j * phi)
    residue = radius * np.mean(vals * e)
    deriv = np.mean(vals / e) / radius
    return complex(residue), complex(deriv)


def finite_part_and_torsion(zetas: Sequence[MellinZeta | LaurentData], max_log_power: int | None = None,
                            pole_tol: float = POLE_TOL, n_contour: int = 48) -> TorsionResult:
    """``log T = 1/2 sum_p (-1)^p p FP_{s=0}(zeta_p(s)/s)`` with ``zetas[p]`` for ``p = 0, 1, ...``.

    ``FP_{s=0}(zeta/s)`` is the Laurent coefficient of ``s^1``.  When
    ``sum_p (-1)^p p zeta_p`` has no pole at 0, the derivative definition is
    evaluated independently (contour integral for :class:`MellinZeta`
    inputs) and must agree with the finite part.
    """
    if not zetas:
        raise UsageError("no zeta functions supplied")
    laurents = []
    for z in zetas:
        lau = z if isinstance(z, LaurentData) else z.laurent(0.0, order=2)
        if abs(lau.center) > 1e-12:
            raise InconsistentLaurentError(f"Laurent data centred at {lau.center}, expected 0")
        if 1 not in lau.coefficients:
            raise InconsistentLaurentError("Laurent data lack the s^1 coefficient")
        if max_log_power is not None and lau.pole_order(pole_tol) > max_log_power + 1:
            raise InconsistentLaurentError(f"pole order {lau.pole_order(pole_tol)} exceeds {max_log_power + 1}")
        laurents.append(lau)
    weights = [(-1) ** p * p for p in range(len(laurents))]
    combo: dict[int, complex] = {}
    for w, lau in zip(weights, laurents):
        for n, c in lau.coefficients.items():
            combo[n] = combo.get(n, 0j) + w * c
    combination = LaurentData(0j, combo)
    fp = 0.5 * sum(w * lau.coefficient(1) for w, lau in zip(weights, laurents))
    scale = max([1.0] + [abs(c) for lau in laurents for c in lau.coefficients.values()])
    pole_free = all(abs(c) <= pole_tol * scale for n, c in combo.items() if n < 0)
    notes = []
    derivative = None
    if pole_free:
        if all(isinstance(z, MellinZeta) for z in zetas):
            radius = _contour_radius(zetas)
            Z = lambda s: sum(w * z(s) for w, z in zip(weights, zetas) if w != 0)
            residue, d1 = contour_derivative_at_zero(Z, radius, n_contour)
            if abs(residue) > max(pole_tol * scale, 1e-8):
                raise InconsistentLaurentError(f"contour residue {abs(residue):.3g} contradicts the pole-free Laurent data")
            derivative = 0.5 * d1.real
            notes.append(f"derivative by contour integral, radius {radius:g}")
        else:
            derivative = 0.5 * combination.coefficient(1).real
            notes.append("derivative read from the combined Laurent data")
        if abs(derivative - fp.real) > 1e-8 * max(1.0, abs(fp)):
            raise InconsistentLaurentError(f"finite part {fp.real!r} and derivative {derivative!r} disagree")
    else:
        notes.append("the combination has a pole at 0; only the finite-part definition applies")
    return TorsionResult(float(fp.real), derivative, pole_free, combination, notes)


# ---------------------------------------------------------------------------
# pole coefficients from fitted expansions


@dataclass(frozen=True)
class PoleCoefficient:
    order: int
    value: float
    stderr: float
    zero_consistent: bool


def pole_coefficients_at_zero(expansions: Sequence[AsymptoticExpansion], weights: Sequence[float] | None = None,
                              zero_threshold: float = 10.0) -> list[PoleCoefficient]:
    """Principal part at ``s = 0`` of ``sum_p w_p zeta_p`` from the ``t^0 (log t)^i`` coefficients.

    Only the exponent-0 terms reach ``s = 0``; the coefficient of ``s^{-m}``
    is ``sum_i c_i (-1)^i i! g_{i+1-m}`` with ``1/Gamma(s) = sum_a g_a s^a``.
    Standard errors are propagated from the fits (independent coefficients).
    """
    if weights is None:
        weights = [(-1) ** p * p for p in range(len(expansions))]
    g = _rgamma_taylor(0.0, 8)
    top = max((tm.log_power for e in expansions for tm in e.terms if abs(tm.exponent) < 1e-12), default=0)
    out = []
    for m in range(1, top + 1):
        val, var = 0.0, 0.0
        for w, e in zip(weights, expansions):
            for tm in e.terms:
                if abs(tm.exponent) > 1e-12 or tm.log_power + 1 - m < 0:
                    continue
                f = w * (-1) ** tm.log_power * math.factorial(tm.log_power) * g[tm.log_power + 1 - m].real
                val += f * tm.coefficient
                var += (f * tm.stderr) ** 2
        se = math.sqrt(var)
        out.append(PoleCoefficient(-m, val, se, abs(val) < zero_threshold * se or val == 0.0))
    return out


def laurent_dumps(lau: LaurentData) -> str:
    return json.dumps(lau.to_json(), indent=2, sort_keys=True)
