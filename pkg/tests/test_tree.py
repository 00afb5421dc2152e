from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ultradiff.tree import (EXPONENT, HAARNORM, CoincidentPointsError, LeveledTree, SizeCapError,
                            TreeError, Vertex)


def test_confluent_differs_at_first_digit(binary4):
    x, y = binary4.point([0, 0, 0, 0]), binary4.point([1, 0, 0, 0])
    assert binary4.confluent(x, y) == binary4.root()


def test_confluent_common_prefix(binary4):
    x, y = binary4.point([0, 1, 0]), binary4.point([0, 1, 1])
    w = binary4.confluent(x, y)
    assert w == Vertex(2, (0, 1))


def test_confluent_noncompact_matches_geodesic_intersection(dyadic):
    x = dyadic.zero()
    y = dyadic.point({-2: 1})
    w = dyadic.confluent(x, y)
    # intersect the vertex sets of the two geodesics on the window
    gx = {dyadic.ancestor(x, k) for k in range(dyadic.kmin, dyadic.kmax + 1)}
    gy = {dyadic.ancestor(y, k) for k in range(dyadic.kmin, dyadic.kmax + 1)}
    assert w == max(gx & gy, key=lambda v: v.level)
    assert w == dyadic.origin(-2)


def test_confluent_of_coincident_points_raises(binary4):
    x = binary4.point([1, 0, 1, 1])
    with pytest.raises(CoincidentPointsError):
        binary4.confluent(x, x)


def test_horocycle_numbers(dyadic):
    assert dyadic.horocycle_number(dyadic.origin(3)) == 3
    assert dyadic.horocycle_number(dyadic.origin(-2)) == -2
    u = dyadic.vertex([0, 0, 0, 1])
    assert u.level == 1
    o = dyadic.origin(0)
    w = dyadic.confluent(u, o)
    assert dyadic.distance(u, w) - dyadic.distance(o, w) == 1 == dyadic.horocycle_number(u)


def test_horocycle_needs_noncompact(binary4):
    with pytest.raises(TreeError):
        binary4.horocycle_number(binary4.root())


def test_ultrametric_values(binary4, dyadic):
    x = binary4.point([0, 1, 1, 0])
    assert binary4.ultrametric(x, x) == 0
    y = binary4.point([0, 1, 1, 1])
    assert binary4.ultrametric(x, y, EXPONENT) == Fraction(1, 8)
    a, b = dyadic.zero(), dyadic.point({-2: 1})
    assert dyadic.ultrametric(a, b, HAARNORM) == 4


def test_haar_masses():
    t = LeveledTree.compact([2, 3, 2])
    assert [t.shell_mass(k) for k in (1, 2, 3)] == [Fraction(1, 2), Fraction(1, 6), Fraction(1, 12)]
    t3 = LeveledTree.noncompact(3, (-3, 2))
    assert t3.shell_mass(-2) == 9
    c = LeveledTree.compact([2, 2, 2])
    assert sum(c.ball_mass(u) for u in c.enumerate_level(2)) == 1


def test_level_sizes():
    t = LeveledTree.compact([2, 3])
    assert len(t.enumerate_level(2)) == 6
    n = LeveledTree.noncompact(2, (-3, 3))
    assert n.enumerate_level(-3) == [n.origin(-3)]
    m = LeveledTree.compact([3, 2, 2, 3])
    for k in range(5):
        assert len(m.enumerate_level(k)) == 1 / m.shell_mass(k)


def test_degree_invariant():
    with pytest.raises(TreeError, match="q_k >= 2"):
        LeveledTree.compact([1, 2])


def test_size_cap_names_power_of_two():
    t = LeveledTree.compact([2] * 20)
    with pytest.raises(SizeCapError, match=r"2\^20"):
        t.enumerate_level(20)


def test_index_roundtrip(mixed232):
    for k in range(4):
        for i, u in enumerate(mixed232.enumerate_level(k)):
            assert mixed232.index(u) == i
            assert mixed232.from_index(k, i) == u


@st.composite
def tree_and_points(draw):
    degrees = draw(st.lists(st.integers(2, 4), min_size=1, max_size=6))
    t = LeveledTree.compact(degrees)
    pts = [t.point([draw(st.integers(0, q - 1)) for q in degrees]) for _ in range(3)]
    return t, pts


@given(tree_and_points())
@settings(max_examples=200, deadline=None)
def test_strong_triangle_inequality(data):
    t, (x, y, z) = data
    for which in (EXPONENT, HAARNORM):
        d = lambda a, b: t.ultrametric(a, b, which)
        assert d(x, z) <= max(d(x, y), d(y, z))
        assert d(x, y) == d(y, x)
