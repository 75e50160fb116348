"""Exact combinatorics of Levi and parabolic subgroups of GL(n) and SL(n).

Conventions
-----------
* Blocks of a Levi composition are labelled ``0..m-1`` from the top-left
  corner; block ``b`` occupies the diagonal indices ``block_indices[b]``.
* A parabolic ``P`` in ``P(M)`` is the block-upper-triangular group for the
  ordering ``block_order`` (the block listed first is the "top" one).  The
  standard parabolic has ``block_order == (0, 1, ..., m-1)``.
* ``a_0`` is identified with ``R^n`` (diagonal matrices) and carries the
  trace form ``<X, Y> = sum x_i y_i``.  Elements of ``a_M`` and of its dual
  are stored as block-constant vectors of ``a_0``; for the root
  ``beta = (i, j)`` of ``A_M`` the vector ``1_{B_i}/n_i - 1_{B_j}/n_j``
  represents both the functional (through the trace form) and the coroot
  (the projection of the coroot of a simple root restricting to beta).
* Levi subgroups containing the diagonal torus that are not in standard
  block form are set partitions of the index set, stored canonically: each
  part sorted increasingly, parts sorted by their smallest element.

All arithmetic here is exact (:class:`fractions.Fraction`); the only
floating point numbers are covolumes and ``theta_P``, which involve a
square root.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import InvalidRankError, MismatchedLeviError, UsageError


class GroupKind(str, Enum):
    GL = "GL"
    SL = "SL"


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**12)
    return Fraction(x)


@dataclass(frozen=True)
class AVector:
    """A vector of ``a_0`` with exact rational coordinates."""

    coords: tuple[Fraction, ...]
    kind: GroupKind = GroupKind.GL

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(_frac(c) for c in self.coords))
        if self.kind == GroupKind.SL and sum(self.coords) != 0:
            raise UsageError("SL-kind AVector must have trace zero")

    @property
    def n(self) -> int:
        return len(self.coords)

    def pair(self, other: "AVector | Sequence") -> Fraction:
        oc = other.coords if isinstance(other, AVector) else tuple(_frac(c) for c in other)
        if len(oc) != self.n:
            raise UsageError("dimension mismatch in pairing")
        return sum((a * b for a, b in zip(self.coords, oc)), Fraction(0))

    def __add__(self, other: "AVector") -> "AVector":
        return AVector(tuple(a + b for a, b in zip(self.coords, other.coords)), self.kind)

    def __sub__(self, other: "AVector") -> "AVector":
        return AVector(tuple(a - b for a, b in zip(self.coords, other.coords)), self.kind)

    def __neg__(self) -> "AVector":
        return AVector(tuple(-a for a in self.coords), self.kind)

    def scale(self, s) -> "AVector":
        s = _frac(s)
        return AVector(tuple(s * a for a in self.coords), self.kind)

    def as_floats(self) -> list[float]:
        return [float(c) for c in self.coords]

    def to_json(self) -> list[str]:
        return [f"{c.numerator}/{c.denominator}" for c in self.coords]

    @classmethod
    def from_json(cls, data: Iterable[str], kind: GroupKind = GroupKind.GL) -> "AVector":
        return cls(tuple(Fraction(s) for s in data), kind)


@dataclass(frozen=True)
class LeviComposition:
    """A standard Levi subgroup ``GL(n_1) x ... x GL(n_m)`` (block diagonal)."""

    blocks: tuple[int, ...]
    kind: GroupKind = GroupKind.GL

    def __post_init__(self):
        blocks = tuple(int(b) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "kind", GroupKind(self.kind))
        if not blocks or any(b < 1 for b in blocks):
            raise UsageError(f"invalid composition {blocks}")

    @property
    def n(self) -> int:
        return sum(self.blocks)

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def rank(self) -> int:
        """``dim a_M^G``."""
        return len(self.blocks) - 1

    @property
    def block_indices(self) -> tuple[tuple[int, ...], ...]:
        out, start = [], 0
        for b in self.blocks:
            out.append(tuple(range(start, start + b)))
            start += b
        return tuple(out)

    def block_of(self) -> tuple[int, ...]:
        """Block label of every diagonal index."""
        return tuple(b for b, idx in enumerate(self.block_indices) for _ in idx)

    @classmethod
    def minimal(cls, n: int, kind: GroupKind = GroupKind.GL) -> "LeviComposition":
        return cls((1,) * n, kind)

    @classmethod
    def full(cls, n: int, kind: GroupKind = GroupKind.GL) -> "LeviComposition":
        return cls((n,), kind)

    @classmethod
    def parse(cls, text: str, kind: GroupKind = GroupKind.GL) -> "LeviComposition":
        try:
            return cls(tuple(int(x) for x in text.replace(" ", "").split(",") if x), kind)
        except ValueError as exc:
            raise UsageError(f"cannot parse Levi composition {text!r}") from exc

    def block_vector(self, values: Sequence, kind: GroupKind | None = None) -> AVector:
        """Block-constant ``AVector`` with value ``values[b]`` on block ``b``."""
        coords = [_frac(values[b]) for b in self.block_of()]
        return AVector(tuple(coords), kind or self.kind)


@dataclass(frozen=True)
class ParabolicDatum:
    levi: LeviComposition
    block_order: tuple[int, ...]

    def __post_init__(self):
        order = tuple(int(b) for b in self.block_order)
        object.__setattr__(self, "block_order", order)
        if sorted(order) != list(range(self.levi.num_blocks)):
            raise UsageError(f"block order {order} is not a permutation")

    @classmethod
    def standard(cls, levi: LeviComposition) -> "ParabolicDatum":
        return cls(levi, tuple(range(levi.num_blocks)))

    @property
    def is_standard(self) -> bool:
        return self.block_order == tuple(range(self.levi.num_blocks))

    def position(self, block: int) -> int:
        return self.block_order.index(block)

    def index_permutation(self) -> list[int]:
        """Diagonal indices listed block by block in the order of ``P``."""
        idx = self.levi.block_indices
        return [i for b in self.block_order for i in idx[b]]

    def opposite(self) -> "ParabolicDatum":
        return ParabolicDatum(self.levi, tuple(reversed(self.block_order)))


# ---------------------------------------------------------------------------
# enumeration


def enumerate_levis(n: int, kind: GroupKind = GroupKind.GL) -> list[LeviComposition]:
    """All ``2^(n-1)`` compositions of ``n``, ordered by the binary cut mask."""
    if n < 2:
        raise InvalidRankError(f"rank n={n} must be at least 2")
    out = []
    for mask in range(2 ** (n - 1)):
        blocks, size = [], 1
        for pos in range(n - 1):
            if mask >> pos & 1:
                blocks.append(size)
                size = 1
            else:
                size += 1
        blocks.append(size)
        out.append(LeviComposition(tuple(blocks), kind))
    return out


def parabolics_containing(M: LeviComposition) -> list[ParabolicDatum]:
    """The ``(#blocks)!`` parabolics in ``P(M)`` (lexicographic block orders)."""
    return [ParabolicDatum(M, perm) for perm in itertools.permutations(range(M.num_blocks))]


def set_partitions(elements: Sequence) -> list[tuple[tuple, ...]]:
    """All set partitions of ``elements`` in canonical form."""
    elements = list(elements)
    if not elements:
        return [()]
    first, rest = elements[0], elements[1:]
    out = []
    for part in set_partitions(rest):
        out.append(((first,),) + part)
        for i in range(len(part)):
            merged = part[:i] + ((first,) + part[i],) + part[i + 1:]
            out.append(merged)
    return [canonical_partition(p) for p in out]


def canonical_partition(parts: Iterable[Iterable]) -> tuple[tuple, ...]:
    cleaned = [tuple(sorted(p)) for p in parts if len(tuple(p)) > 0]
    return tuple(sorted(cleaned, key=lambda p: p[0]))


def levis_containing(M: LeviComposition) -> list[tuple[tuple[int, ...], ...]]:
    """``L(M)``: Levi subgroups containing ``M``, as set partitions of its block labels.

    The Levi ``L`` attached to a partition is the block-diagonal group
    (after a coordinate permutation) whose blocks are the unions of the
    ``M``-blocks in each part.
    """
    return set_partitions(range(M.num_blocks))


def f_parabolics(M: LeviComposition) -> list[tuple[tuple[int, ...], ...]]:
    """``F(M)``: parabolics containing ``M`` as *ordered* set partitions of the block labels."""
    out = []
    for parts in levis_containing(M):
        for perm in itertools.permutations(parts):
            out.append(tuple(perm))
    return out


def levis_containing_torus(n: int) -> list[tuple[tuple[int, ...], ...]]:
    """``L(M_0)`` for ``GL(n)`` as canonical set partitions of ``{0..n-1}``."""
    if n < 1:
        raise InvalidRankError(f"rank n={n} must be positive")
    return set_partitions(range(n))


def levi_of_partition(parts: Sequence[Sequence[int]], M: LeviComposition) -> tuple[tuple[int, ...], ...]:
    """Translate a partition of ``M``-block labels into a partition of diagonal indices."""
    idx = M.block_indices
    return canonical_partition([i for b in part for i in idx[b]] for part in parts)


# ---------------------------------------------------------------------------
# roots, coroots, weights


def root_vector(M: LeviComposition, i: int, j: int) -> AVector:
    """The root ``beta=(i,j)`` of ``A_M`` (equivalently its coroot) as a vector of ``a_0``."""
    if i == j:
        raise UsageError("a root needs two distinct blocks")
    ni, nj = M.blocks[i], M.blocks[j]
    coords = []
    for b in M.block_of():
        if b == i:
            coords.append(Fraction(1, ni))
        elif b == j:
            coords.append(Fraction(-1, nj))
        else:
            coords.append(Fraction(0))
    return AVector(tuple(coords), M.kind)


def reduced_roots(P: ParabolicDatum) -> list[tuple[int, int]]:
    """``Sigma_P``: pairs ``(i, j)`` of blocks with ``i`` above ``j`` in ``P``."""
    order = P.block_order
    return [(order[a], order[b]) for a in range(len(order)) for b in range(a + 1, len(order))]


def fundamental_weight(P: ParabolicDatum, k: int) -> AVector:
    """``varpi_k`` of ``P`` (``1 <= k < m``): the first ``k`` blocks, projected to ``a^G``."""
    M = P.levi
    top = set(P.block_order[:k])
    size = sum(M.blocks[b] for b in top)
    shift = Fraction(size, M.n)
    coords = [(Fraction(1) if b in top else Fraction(0)) - shift for b in M.block_of()]
    return AVector(tuple(coords), M.kind)


@dataclass(frozen=True)
class RootData:
    simple_roots: tuple[AVector, ...]
    simple_coroots: tuple[AVector, ...]
    fundamental_weights: tuple[AVector, ...]
    simple_pairs: tuple[tuple[int, int], ...]

    def to_json(self) -> dict:
        return {
            "simple_roots": [a.to_json() for a in self.simple_roots],
            "simple_coroots": [a.to_json() for a in self.simple_coroots],
            "fundamental_weights": [w.to_json() for w in self.fundamental_weights],
            "simple_pairs": [list(p) for p in self.simple_pairs],
        }


def simple_roots_coroots(P: ParabolicDatum) -> RootData:
    """``Delta_P``, ``Delta_P^vee`` and the dual basis ``hat Delta_P`` of ``(a_P^G)^*``."""
    order = P.block_order
    pairs = tuple((order[a], order[a + 1]) for a in range(len(order) - 1))
    roots = tuple(root_vector(P.levi, i, j) for i, j in pairs)
    weights = tuple(fundamental_weight(P, k) for k in range(1, len(order)))
    return RootData(roots, roots, weights, pairs)


def tau_and_hat_tau(P: ParabolicDatum, X: AVector | Sequence) -> tuple[int, int]:
    """Characteristic functions ``tau_P(X)`` and ``hat tau_P(X)`` (strict inequalities)."""
    data = simple_roots_coroots(P)
    xv = X if isinstance(X, AVector) else AVector(tuple(_frac(c) for c in X))
    if xv.n != P.levi.n:
        raise UsageError("X has the wrong dimension")
    tau = int(all(a.pair(xv) > 0 for a in data.simple_roots))
    hat = int(all(w.pair(xv) > 0 for w in data.fundamental_weights))
    return tau, hat


def adjacency(P: ParabolicDatum, Q: ParabolicDatum) -> AVector | None:
    """The root ``alpha`` with ``Sigma_P ∩ -Sigma_Q = {alpha}``, or ``None``."""
    if P.levi != Q.levi:
        raise MismatchedLeviError("adjacency needs parabolics with the same Levi")
    sigma_q = set(reduced_roots(Q))
    common = [(i, j) for (i, j) in reduced_roots(P) if (j, i) in sigma_q]
    if len(common) != 1:
        return None
    i, j = common[0]
    return root_vector(P.levi, i, j)


def _det_fraction(mat: list[list[Fraction]]) -> Fraction:
    """Exact determinant by fraction-valued Gaussian elimination."""
    a = [row[:] for row in mat]
    n = len(a)
    det = Fraction(1)
    for c in range(n):
        piv = next((r for r in range(c, n) if a[r][c] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != c:
            a[c], a[piv] = a[piv], a[c]
            det = -det
        det *= a[c][c]
        for r in range(c + 1, n):
            f = a[r][c] / a[c][c]
            if f:
                for k in range(c, n):
                    a[r][k] -= f * a[c][k]
    return det


def coroot_gram(P: ParabolicDatum) -> list[list[Fraction]]:
    cor = simple_roots_coroots(P).simple_coroots
    return [[a.pair(b) for b in cor] for a in cor]


def covolume_squared(P: ParabolicDatum) -> Fraction:
    """Squared covolume of the lattice spanned by ``Delta_P^vee`` in ``a_M^G`` (trace form)."""
    gram = coroot_gram(P)
    if not gram:
        return Fraction(1)
    return _det_fraction(gram)


def covolume(P: ParabolicDatum) -> float:
    return math.sqrt(covolume_squared(P))


def theta_P(P: ParabolicDatum, lam: AVector | Sequence) -> float:
    """``theta_P(lambda) = v_P^{-1} prod_{alpha in Delta_P} lambda(alpha^vee)``."""
    lv = lam if isinstance(lam, AVector) else AVector(tuple(_frac(c) for c in lam))
    prod = Fraction(1)
    for a in simple_roots_coroots(P).simple_coroots:
        prod *= lv.pair(a)
    return float(prod) / covolume(P)


def theta_P_exact_times_covolume(P: ParabolicDatum, lam: AVector) -> Fraction:
    """``v_P * theta_P(lambda)``, exact."""
    prod = Fraction(1)
    for a in simple_roots_coroots(P).simple_coroots:
        prod *= lam.pair(a)
    return prod


# ---------------------------------------------------------------------------
# serialization


def dump_enumeration(n: int, kind: GroupKind = GroupKind.GL) -> dict:
    """Everything the ``roots`` CLI command reports, as a JSON-ready dict."""
    levis = enumerate_levis(n, kind)
    out = {"n": n, "kind": kind.value, "levis": []}
    for M in levis:
        entry = {"blocks": list(M.blocks), "parabolics": []}
        for P in parabolics_containing(M):
            rd = simple_roots_coroots(P)
            cv2 = covolume_squared(P)
            entry["parabolics"].append(
                {
                    "block_order": list(P.block_order),
                    "covolume_squared": f"{cv2.numerator}/{cv2.denominator}",
                    **rd.to_json(),
                }
            )
        entry["levis_containing"] = [[list(p) for p in parts] for parts in levis_containing(M)]
        entry["num_f_parabolics"] = len(f_parabolics(M))
        out["levis"].append(entry)
    out["levis_containing_torus"] = [[list(p) for p in parts] for parts in levis_containing_torus(n)]
    return out


def dumps_enumeration(n: int, kind: GroupKind = GroupKind.GL) -> str:
    return json.dumps(dump_enumeration(n, kind), indent=2, sort_keys=True)
