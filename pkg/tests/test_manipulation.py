import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sympy.utilities.iterables import partitions as sympy_partitions

from mcfl.errors import ValidationError
from mcfl.game_core import CharacteristicFunction, GameSpec, make_value_table, random_value_table
from mcfl.manipulation import (
    SplitSpec,
    best_partition,
    equilibrium_profile,
    integer_partitions,
    partition_payoffs,
    split_game,
    split_gain,
    split_identity_payoffs,
)
from mcfl.shapley import mcfl_allocation

from oracles import mcfl_payoff_bruteforce, random_concave

sqrt_v = make_value_table("concave-power", 40, gamma=0.5)
lin_v = make_value_table("linear", 40, a=2.0)


@pytest.mark.parametrize("n", range(0, 11))
def test_partitions_match_sympy(n):
    ours = sorted(integer_partitions(n))
    ref = sorted(
        tuple(sorted(itertools.chain.from_iterable([k] * c for k, c in p.items()), reverse=True))
        for p in sympy_partitions(n)
    )
    if n == 0:
        ref = [()]
    assert ours == ref


def test_split_game_examples():
    assert split_game([2, 1], SplitSpec(0, [1, 1])).m == (1, 1, 1)
    assert split_game([3], SplitSpec(0, [2, 1])).m == (2, 1)
    assert split_game([1, 3, 2], SplitSpec(1, [2, 1])).m == (1, 2, 1, 2)
    with pytest.raises(ValidationError):
        SplitSpec(0, [0, 2])
    with pytest.raises(ValidationError):
        split_game([2], SplitSpec(0, [2, 1]))


def test_split_gain_examples():
    assert abs(split_gain([2, 1], 0, 1, 1, lin_v).gain) <= 1e-9
    assert split_gain([2, 1], 0, 1, 1, sqrt_v).gain > 1e-9
    assert abs(split_gain([2], 0, 1, 1, sqrt_v).gain) <= 1e-9


def test_split_gain_against_bruteforce():
    an = split_gain([2, 1], 0, 1, 1, sqrt_v)
    orig = mcfl_payoff_bruteforce((2, 1), sqrt_v, 0, 2)
    split = sum(mcfl_payoff_bruteforce((1, 1, 1), sqrt_v, j, 1) for j in range(2))
    assert an.original == pytest.approx(orig, rel=1e-12)
    assert an.split_total == pytest.approx(split, rel=1e-12)
    assert an.split_m == (1, 1, 1) and an.levels == (1, 1)
    # three symmetric singletons each get sqrt(3)/3; value frozen from the oracle
    assert an.split_total == pytest.approx(2 * math.sqrt(3) / 3, rel=1e-12)
    assert an.gain == pytest.approx(0.09763107293781736, rel=1e-12)


def test_best_partition_examples():
    part, val = best_partition([3, 2], 0, sqrt_v)
    assert part == (1, 1, 1)
    scores = dict(partition_payoffs([3, 2], 0, sqrt_v))
    assert val == max(scores.values())
    assert best_partition([3, 2], 0, lin_v)[0] == (3,)
    part, val = best_partition([2], 0, sqrt_v)
    assert part == (2,) and val == pytest.approx(math.sqrt(2))


def test_equilibrium_examples():
    prof, cert = equilibrium_profile([2, 2], sqrt_v)
    assert prof == (1, 1, 1, 1)
    assert cert.passed and cert.min_margin > 0
    assert {d.partition for d in cert.deviations} == {(2,)}
    prof, cert = equilibrium_profile([1, 1], sqrt_v)
    assert prof == (1, 1) and cert.passed and cert.deviations == []
    _, cert = equilibrium_profile([2, 2], lin_v)
    assert cert.passed
    assert all(abs(d.margin) <= 1e-9 for d in cert.deviations)
    with pytest.raises(ValidationError):
        equilibrium_profile([6], sqrt_v)


def test_equilibrium_three_agents():
    rng = np.random.default_rng(3)
    v = CharacteristicFunction(random_concave(rng, 9))
    _, cert = equilibrium_profile([3, 2, 1], v)
    assert cert.passed and cert.min_margin > 0
    assert len(cert.deviations) == 2 + 1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=1, max_size=3), st.integers(0, 2), st.integers(0, 2**32 - 1))
def test_conservation_under_split(m, which, seed):
    k = which % len(m)
    v = random_value_table(sum(m), np.random.default_rng(seed))
    for part in integer_partitions(m[k]):
        sm = split_game(m, SplitSpec(k, part))
        alloc = mcfl_allocation(GameSpec(sm, v))
        vm = v(sum(m))
        assert sum(sm.m) == sum(m)
        assert abs(alloc.full_participation_total() - vm) <= 1e-9 * max(1.0, abs(vm))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=2, max_size=3), st.integers(0, 2**32 - 1))
def test_sign_law_two_way_splits(m, seed):
    rng = np.random.default_rng(seed)
    v = CharacteristicFunction(random_concave(rng, sum(m)))
    linear = random_value_table(sum(m), rng, "linear")
    for k in range(len(m)):
        for i in range(2, m[k] + 1):
            for T in range(1, i):
                assert split_gain(m, k, T, i - T, v).gain > 1e-9
                assert abs(split_gain(m, k, T, i - T, linear).gain) <= 1e-9


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=2, max_size=3), st.integers(0, 2**32 - 1))
def test_refinement_never_hurts(m, seed):
    v = CharacteristicFunction(random_concave(np.random.default_rng(seed), sum(m)))
    k = 0
    scores = dict(partition_payoffs(m, k, v))
    for part, val in scores.items():
        for j, p in enumerate(part):
            for sub in integer_partitions(p):
                if len(sub) < 2:
                    continue
                finer = tuple(sorted(part[:j] + sub + part[j + 1 :], reverse=True))
                assert scores[finer] >= val - 1e-9


def test_split_payoffs_follow_part_order():
    a = split_identity_payoffs([3, 1], SplitSpec(0, [2, 1]), sqrt_v)
    b = split_identity_payoffs([3, 1], SplitSpec(0, [1, 2]), sqrt_v)
    assert sum(a) == pytest.approx(sum(b), rel=1e-12)
    assert a[0] == pytest.approx(b[1], rel=1e-12)
