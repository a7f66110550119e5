import itertools
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from perpetuity_lab.affine import (IDENTITY, AffineMap, compose, count_words, enumerate_semigroup,
                                   fixed_point, inverse, iterate)
from perpetuity_lab.errors import BudgetExceeded, PreconditionError, SlopeOne

pos = st.floats(0.05, 20.0)
nonneg = st.floats(0.0, 20.0)
maps = st.builds(AffineMap, pos, nonneg)
# dyadic rationals keep every product and sum exact in binary floating point
dyadic_pos = st.integers(1, 64).map(lambda k: k / 16)
dyadic = st.integers(0, 64).map(lambda k: k / 16)
dyadic_maps = st.builds(AffineMap, dyadic_pos, dyadic)


def close(a, b, rel):
    return abs(a - b) <= rel * max(1.0, abs(a), abs(b))


def test_compose_examples():
    assert compose(IDENTITY, AffineMap(3, 4)) == AffineMap(3, 4)
    assert compose(AffineMap(2, 1), AffineMap(3, 4)) == AffineMap(6, 9)
    assert compose(AffineMap(2, 1), AffineMap(3, 4))(0) == AffineMap(2, 1)(AffineMap(3, 4)(0)) == 9


def test_inverse_examples():
    assert inverse(AffineMap(2, 4)) == AffineMap(0.5, -2, relaxed=True)
    g = inverse(IDENTITY)
    assert (g.m, g.q) == (1.0, 0.0)
    g = inverse(AffineMap(0.5, 1))
    assert (g.m, g.q) == (2.0, -2.0)


def test_fixed_point_examples():
    assert fixed_point(AffineMap(1 / 3, 0)) == 0
    assert close(fixed_point(AffineMap(1 / 3, 2 / 3)), 1.0, 1e-15)
    assert fixed_point(AffineMap(2, 1)) == -1
    with pytest.raises(SlopeOne):
        fixed_point(AffineMap(1.0, 2.0))
    with pytest.raises(SlopeOne):
        fixed_point(AffineMap(1.0 + 1e-10, 2.0))


def test_iterate_examples():
    assert iterate(AffineMap(0.5, 1), 3, 0.0) == 1.75
    assert iterate(AffineMap(1, 5), 4, 2.0) == 22
    assert close(iterate(AffineMap(2, 1), 10, 1.0), 2047.0, 1e-12)
    with pytest.raises(PreconditionError):
        iterate(AffineMap(2, 1), 0, 1.0)


def test_constructor_rejects():
    with pytest.raises(PreconditionError):
        AffineMap(0.0, 1.0)
    with pytest.raises(PreconditionError):
        AffineMap(1.0, -1.0)


@settings(max_examples=300)
@given(dyadic_maps, dyadic_maps, dyadic_maps)
def test_associativity_exact_on_dyadics(a, b, c):
    assert compose(compose(a, b), c) == compose(a, compose(b, c))


@settings(max_examples=300)
@given(maps, maps, maps)
def test_associativity_relative(a, b, c):
    l, r = compose(compose(a, b), c), compose(a, compose(b, c))
    assert close(l.m, r.m, 1e-12) and close(l.q, r.q, 1e-12)


def test_action_homomorphism_batch():
    rng = np.random.default_rng(1)
    m = rng.uniform(0.05, 5, (10 ** 4, 2))
    q = rng.uniform(0, 5, (10 ** 4, 2))
    x = rng.uniform(-10, 10, 10 ** 4)
    for i in range(10 ** 4):
        a, b = AffineMap(m[i, 0], q[i, 0]), AffineMap(m[i, 1], q[i, 1])
        assert close(compose(a, b)(x[i]), a(b(x[i])), 1e-12)


@given(maps)
def test_inverse_roundtrip(g):
    e = compose(g, inverse(g))
    assert close(e.m, 1.0, 1e-12) and abs(e.q) <= 1e-12 * max(1.0, g.q)


@given(maps)
def test_fixed_point_residual(g):
    if abs(g.m - 1) < 1e-9:
        return
    x = fixed_point(g)
    assert abs(g(x) - x) <= 1e-12 * (1 + abs(x)) / abs(1 - g.m) * 4 or abs(g(x) - x) <= 1e-12 * (1 + abs(x))


@given(st.builds(AffineMap, st.floats(0.1, 0.95), nonneg))
def test_fixed_point_residual_contractive(g):
    x = fixed_point(g)
    assert abs(g(x) - x) <= 1e-12 * (1 + abs(x))


@settings(max_examples=200)
@given(st.builds(AffineMap, st.floats(0.2, 1.8), st.floats(0, 3)), st.integers(1, 20), st.floats(-5, 5))
def test_iterate_matches_repeated_application(g, n, x):
    y = x
    for _ in range(n):
        y = g(y)
    assert abs(iterate(g, n, x) - y) <= 1e-10 * max(1.0, abs(y), abs(x))


def brute_force(gens, depth):
    words = [w for L in range(1, depth + 1) for w in itertools.product(range(len(gens)), repeat=L)]
    words.sort()
    elems = [reduce(compose, [gens[i] for i in w]) for w in words]
    return words, elems


@pytest.mark.parametrize("k,depth", [(1, 3), (2, 1), (2, 2), (2, 5), (3, 4)])
def test_enumeration_matches_brute_force(k, depth):
    rng = np.random.default_rng(k * 10 + depth)
    gens = [AffineMap(float(rng.uniform(0.1, 2)), float(rng.uniform(0, 2))) for _ in range(k)]
    en = enumerate_semigroup(gens, depth)
    words, elems = brute_force(gens, depth)
    assert len(en) == len(words) == count_words(k, depth)
    for i, (g, w) in enumerate(en.elements):
        assert w == words[i]
        assert close(g.m, elems[i].m, 1e-12) and close(g.q, elems[i].q, 1e-12)


def test_enumeration_examples():
    gens = [AffineMap(1 / 3, 0), AffineMap(1 / 3, 2 / 3)]
    en1 = enumerate_semigroup(gens, 1)
    assert [g for g, _ in en1.elements] == gens
    en2 = enumerate_semigroup(gens, 2)
    assert len(en2) == 6
    g = dict((w, g) for g, w in en2.elements)[(0, 1)]
    assert close(g.m, 1 / 9, 1e-15) and close(g.q, 2 / 9, 1e-15)
    g0 = AffineMap(0.5, 1)
    en = enumerate_semigroup([g0], 3)
    assert [g for g, _ in en.elements] == [g0, compose(g0, g0), compose(g0, compose(g0, g0))]


def test_enumeration_budget():
    with pytest.raises(BudgetExceeded):
        enumerate_semigroup([AffineMap(0.5, 0), AffineMap(0.5, 1)], 22)
    with pytest.raises(BudgetExceeded):
        enumerate_semigroup([AffineMap(0.5, 0)] * 3, 5, budget=100)
