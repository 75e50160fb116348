from __future__ import annotations

import json
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torsionlab.errors import InvalidRankError, MismatchedLeviError
from torsionlab.roots import (
    AVector,
    GroupKind,
    LeviComposition,
    ParabolicDatum,
    adjacency,
    covolume_squared,
    dump_enumeration,
    enumerate_levis,
    f_parabolics,
    levis_containing,
    levis_containing_torus,
    parabolics_containing,
    simple_roots_coroots,
    tau_and_hat_tau,
    theta_P,
)

BELL = {1: 1, 2: 2, 3: 5, 4: 15, 5: 52}


def _brute_force_torus_levis(n: int) -> set:
    """Levis containing the diagonal torus, via equivalence relations on {0..n-1}."""
    import itertools

    found = set()
    for labels in itertools.product(range(n), repeat=n):
        parts = {}
        for i, lab in enumerate(labels):
            parts.setdefault(lab, []).append(i)
        found.add(tuple(sorted(tuple(p) for p in parts.values())))
    return found


def test_enumerate_levis_small():
    assert [M.blocks for M in enumerate_levis(2)] == [(2,), (1, 1)]
    assert sorted(M.blocks for M in enumerate_levis(3)) == [(1, 1, 1), (1, 2), (2, 1), (3,)]
    assert len(enumerate_levis(5)) == 16
    assert len({M.blocks for M in enumerate_levis(5)}) == 16


def test_enumerate_levis_rejects_small_rank():
    with pytest.raises(InvalidRankError):
        enumerate_levis(1)


@pytest.mark.parametrize("blocks, count", [((1, 1, 1), 6), ((2, 1), 2), ((3,), 1), ((1, 1, 1, 1), 24)])
def test_parabolic_counts(blocks, count):
    assert len(parabolics_containing(LeviComposition(blocks))) == count


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_torus_levis_match_brute_force(n):
    ours = levis_containing_torus(n)
    assert len(ours) == BELL[n]
    assert set(ours) == _brute_force_torus_levis(n)


def test_levis_and_f_parabolics_of_torus_gl3():
    M0 = LeviComposition.minimal(3)
    assert len(levis_containing(M0)) == 5
    assert len(f_parabolics(M0)) == 13


def test_gl2_borel_roots():
    P = ParabolicDatum.standard(LeviComposition.minimal(2))
    rd = simple_roots_coroots(P)
    assert rd.simple_roots[0].coords == (1, -1)
    assert rd.simple_coroots[0].coords == (1, -1)


def test_gl3_borel_duality():
    P = ParabolicDatum.standard(LeviComposition.minimal(3))
    rd = simple_roots_coroots(P)
    w1 = rd.fundamental_weights[0]
    assert w1.pair(rd.simple_coroots[0]) == 1
    assert w1.pair(rd.simple_coroots[1]) == 0


@pytest.mark.parametrize("blocks", [(1, 1), (2, 1), (1, 2), (1, 1, 1), (2, 1, 1), (1, 2, 1, 1), (2, 3)])
def test_duality_exact_all_parabolics(blocks):
    for P in parabolics_containing(LeviComposition(blocks)):
        rd = simple_roots_coroots(P)
        for i, w in enumerate(rd.fundamental_weights):
            for j, c in enumerate(rd.simple_coroots):
                assert w.pair(c) == (1 if i == j else 0)


def test_maximal_parabolic_root_on_blocks():
    M = LeviComposition((2, 1))
    P = ParabolicDatum.standard(M)
    alpha = simple_roots_coroots(P).simple_roots[0]
    X = M.block_vector([Fraction(5), Fraction(2)])
    assert alpha.pair(X) == 3


def test_tau_examples():
    P = ParabolicDatum.standard(LeviComposition.minimal(3))
    assert tau_and_hat_tau(P, (2, 1, -3))[0] == 1
    assert tau_and_hat_tau(P, (0, 0, 0)) == (0, 0)
    assert tau_and_hat_tau(P, (1, 0, -1))[1] == 1


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=4, max_size=4))
def test_tau_implies_hat_tau(xs):
    for P in parabolics_containing(LeviComposition.minimal(4)):
        tau, hat = tau_and_hat_tau(P, xs)
        if tau:
            assert hat


def test_adjacency_examples():
    M2 = LeviComposition.minimal(2)
    B, Bbar = parabolics_containing(M2)
    assert adjacency(B, Bbar).coords == (1, -1)
    assert adjacency(B, B) is None
    M3 = LeviComposition.minimal(3)
    B3 = ParabolicDatum.standard(M3)
    swap = ParabolicDatum(M3, (1, 0, 2))
    assert adjacency(B3, swap) is not None
    assert adjacency(B3, B3.opposite()) is None


def test_adjacency_antisymmetric():
    for blocks in [(1, 1, 1), (2, 1, 1), (1, 1, 1, 1)]:
        Ps = parabolics_containing(LeviComposition(blocks))
        for P in Ps:
            for Q in Ps:
                a, b = adjacency(P, Q), adjacency(Q, P)
                assert (a is None) == (b is None)
                if a is not None:
                    assert (-a).coords == b.coords


def test_adjacency_mismatched_levi():
    with pytest.raises(MismatchedLeviError):
        adjacency(
            ParabolicDatum.standard(LeviComposition.minimal(3)),
            ParabolicDatum.standard(LeviComposition((2, 1))),
        )


def test_covolumes():
    assert covolume_squared(ParabolicDatum.standard(LeviComposition.minimal(2))) == 2
    assert covolume_squared(ParabolicDatum.standard(LeviComposition.minimal(3))) == 3
    assert covolume_squared(ParabolicDatum.standard(LeviComposition((2, 1)))) == Fraction(3, 2)
    assert covolume_squared(ParabolicDatum.standard(LeviComposition.minimal(4))) == 4


def test_theta_examples():
    P2 = ParabolicDatum.standard(LeviComposition.minimal(2))
    w = simple_roots_coroots(P2).fundamental_weights[0]
    assert theta_P(P2, w) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert theta_P(P2, (0, 0)) == 0
    P3 = ParabolicDatum.standard(LeviComposition.minimal(3))
    w1, w2 = simple_roots_coroots(P3).fundamental_weights
    assert theta_P(P3, w1 + w2) == pytest.approx(1 / math.sqrt(3), abs=1e-15)


def test_sl_vectors_must_be_traceless():
    with pytest.raises(ValueError):
        AVector((1, 0), GroupKind.SL)
    AVector((1, -1), GroupKind.SL)


def test_enumeration_json_roundtrip():
    data = dump_enumeration(3)
    text = json.dumps(data, sort_keys=True)
    back = json.loads(text)
    borel = [L for L in back["levis"] if L["blocks"] == [1, 1, 1]][0]
    std = [P for P in borel["parabolics"] if P["block_order"] == [0, 1, 2]][0]
    assert std["covolume_squared"] == "3/1"
    assert AVector.from_json(std["simple_roots"][0]).coords == (1, -1, 0)
