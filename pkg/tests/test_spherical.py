import cmath
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ultradiff.hierlap import SpectralError, SpectralModel, taibleson_eigenvalues
from ultradiff.spherical import (LevyMeasureAnisotropic, LevySequence, MeasureError,
                                 SphericalMeasure, character_eval, character_level, convolve,
                                 dilate, eigenvalues_to_levy, fourier_transform, from_rank,
                                 group_add, group_convolve, group_neg, group_norm, heat_measure,
                                 levy_khintchine_all, levy_khintchine_exponent,
                                 levy_to_eigenvalues, phi_eval, quotient_order, rank,
                                 spherical_transform, taibleson_levy)
from ultradiff.tree import LeveledTree


# -- spherical functions and transforms --


def test_phi_values(binary4):
    assert all(phi_eval(binary4, 0, binary4.point(d)) == 1 for d in ([0], [1, 1], [1, 0, 1, 1]))
    # middle shell of phi_2 is B_1 minus B_2: value -1/(q_1 - 1) = -1
    assert phi_eval(binary4, 2, binary4.point([0, 1, 1])) == -1
    assert phi_eval(binary4, 2, binary4.point([1, 0, 0])) == 0
    assert phi_eval(binary4, 2, binary4.point([0, 0, 1])) == 1


def test_transform_of_far_mass_vanishes(dyadic):
    far = SphericalMeasure(dyadic, 3, (Fraction(1),) + (Fraction(0),) * 5, Fraction(0))
    assert all(spherical_transform(far, k) == 0 for k in range(dyadic.kmin + 2, 4))


def random_spherical(tree, level, rng, exact=True):
    w = [Fraction(int(x), 97) for x in rng.integers(0, 20, level - tree.kmin + 1)]
    total = sum(w)
    w = [x / total for x in w]
    return SphericalMeasure(tree, level, tuple(w[:-1]), w[-1])


def test_unit_is_neutral_and_transforms_multiply():
    tree = LeveledTree.noncompact([2, 3, 2, 2], (-2, 2))
    rng = np.random.default_rng(1)
    mu, nu = random_spherical(tree, 2, rng), random_spherical(tree, 2, rng)
    assert convolve(mu, SphericalMeasure.unit(tree, 2)) == mu
    conv = convolve(mu, nu)
    for k in range(tree.kmin + 1, 3):
        assert spherical_transform(conv, k) == spherical_transform(mu, k) * spherical_transform(nu, k)


def test_spherical_convolve_equals_group_convolution():
    tree = LeveledTree.noncompact(2, (-2, 2))
    rng = np.random.default_rng(2)
    for _ in range(5):
        mu, nu = random_spherical(tree, 2, rng), random_spherical(tree, 2, rng)
        brute = group_convolve(tree, mu.ball_weights(), nu.ball_weights(), 2)
        assert list(brute) == list(convolve(mu, nu).ball_weights())


def test_convolve_mixed_radix_against_group_convolution():
    tree = LeveledTree.compact([2, 3, 2])
    rng = np.random.default_rng(3)
    mu, nu = random_spherical(tree, 3, rng), random_spherical(tree, 3, rng)
    brute = group_convolve(tree, mu.ball_weights(), nu.ball_weights(), 3)
    assert list(brute) == list(convolve(mu, nu).ball_weights())


# -- Levy sequences --


def test_levy_eigenvalues_geometric_tails():
    tree = LeveledTree.noncompact(2, (-3, 4))
    a = LevySequence(tree, {k: Fraction(2) ** k for k in range(-3, 5)})
    m = levy_to_eigenvalues(a)
    assert all(m.lam(k) == 3 * Fraction(2) ** k for k in range(-3, 4))


def test_levy_eigenvalues_flat_shell():
    tree = LeveledTree.noncompact([3, 2, 2], (0, 3))
    a = LevySequence(tree, {0: 1, 1: 2, 2: 2, 3: 5})
    assert levy_to_eigenvalues(a).lam(1) == 2


def test_levy_roundtrip_and_taibleson_sequence():
    for p, alpha in [(2, 1), (3, 1), (2, 2)]:
        model = taibleson_eigenvalues(p, alpha, (-5, 5))
        a = taibleson_levy(p, alpha, (-5, 5))
        assert levy_to_eigenvalues(a).eigenvalues == model.eigenvalues
        assert eigenvalues_to_levy(model, a[-5]).a == a.a


def test_levy_validation(dyadic):
    with pytest.raises(SpectralError):
        LevySequence(dyadic, {k: 3 - k for k in range(-3, 4)})
    model = SpectralModel(dyadic, {k: Fraction(1) for k in range(-3, 3)})
    with pytest.raises(SpectralError):
        eigenvalues_to_levy(model, Fraction(2))


def test_anisotropic_measure_validation():
    tree = LeveledTree.noncompact([2, 3, 2, 2], (-2, 2))
    a = LevySequence(tree, {-2: Fraction(1), -1: Fraction(2), 0: Fraction(4), 1: Fraction(8), 2: Fraction(16)})
    depth = 0
    off = [u for u in tree.enumerate_level(depth) if u.digits != (0, 0)]
    # shell off o_-2: digits (1, *); off o_-1: (0, 1), (0, 2)
    masses = {u: 0 for u in off}
    masses[tree.vertex([1, 2])] = Fraction(1)
    masses[tree.vertex([0, 1])] = Fraction(2)
    F = LevyMeasureAnisotropic(a, depth, masses)
    assert F.mass(tree.vertex([1])) == 1 and F.mass(tree.vertex([1, 0])) == 0
    masses[tree.vertex([0, 2])] = Fraction(1)
    with pytest.raises(MeasureError, match="sum"):
        LevyMeasureAnisotropic(a, depth, masses)


# -- group arithmetic --


def test_carry_addition_in_dyadic_integers():
    tree = LeveledTree.noncompact(2, (-2, 3))
    one = tree.point({0: 1})
    assert group_add(tree, one, one) == tree.point({1: 1})
    x = tree.point({-2: 1, 0: 1, 2: 1})
    assert group_add(tree, x, tree.zero()) == x
    assert group_add(tree, x, group_neg(tree, x)) == tree.zero()


def test_mixed_radix_addition_is_cyclic_and_associative():
    tree = LeveledTree.compact([2, 3, 2, 5])
    n = quotient_order(tree)
    assert n == 60
    rng = np.random.default_rng(4)
    for _ in range(10_000):
        x, y, z = (from_rank(tree, int(r)) for r in rng.integers(0, n, 3))
        xy = group_add(tree, x, y)
        assert rank(tree, xy) == (rank(tree, x) + rank(tree, y)) % n
        assert group_add(tree, xy, z) == group_add(tree, x, group_add(tree, y, z))


def test_norm_and_dilation(dyadic):
    x = dyadic.point({-1: 1, 1: 1})
    assert group_norm(dyadic, x) == 2
    assert group_norm(dyadic, dilate(dyadic, x)) == 1
    assert group_norm(dyadic, dyadic.zero()) == 0


def test_characters_on_small_dyadic_quotient():
    tree = LeveledTree.noncompact(2, (-1, 1))
    half = tree.point({-1: 1})
    assert all(character_eval(tree, 0, tree.point(d)) == 1 for d in ([0, 0], [1, 0], [1, 1]))
    # the character with |xi| = 1 is j = 2 in rank numbering
    assert character_level(tree, 2) == 0
    assert cmath.isclose(character_eval(tree, 2, half), -1)


@given(st.integers(0, 59), st.integers(0, 59), st.integers(0, 59))
@settings(max_examples=300, deadline=None)
def test_character_multiplicativity(j, r1, r2):
    tree = LeveledTree.compact([3, 2, 5, 2])
    x, y = from_rank(tree, r1), from_rank(tree, r2)
    lhs = character_eval(tree, j, group_add(tree, x, y))
    assert cmath.isclose(lhs, character_eval(tree, j, x) * character_eval(tree, j, y), abs_tol=1e-12)


def test_character_orders():
    tree = LeveledTree.compact([2, 3, 2])
    n = quotient_order(tree)
    for j in range(n):
        order = n // math.gcd(j, n)
        vals = [character_eval(tree, j, from_rank(tree, r)) for r in range(n)]
        assert len({(round(v.real, 9), round(v.imag, 9)) for v in vals}) == order


# -- exponents --


def test_exponent_trivial_character_is_zero(dyadic):
    a = LevySequence(dyadic, {k: Fraction(2) ** k for k in range(-3, 4)})
    assert levy_khintchine_exponent(a, chi=0) == 0


def test_spherical_exponent_equals_eigenvalue():
    tree = LeveledTree.noncompact([2, 3, 2, 3, 2], (-2, 3))
    a = LevySequence(tree, {-2: Fraction(1, 5), -1: Fraction(1, 2), 0: 1, 1: 3, 2: 4, 3: 11})
    m = levy_to_eigenvalues(a)
    for k in range(tree.kmin + 1, tree.kmax + 1):
        assert levy_khintchine_exponent(a, phi=k) == m.lam(k - 1)


def test_character_exponent_depends_on_character_level_only():
    tree = LeveledTree.noncompact([2, 3, 2, 2], (-2, 2))
    a = LevySequence(tree, {-2: Fraction(1), -1: Fraction(3), 0: Fraction(4), 1: Fraction(9), 2: Fraction(20)})
    m = levy_to_eigenvalues(a)
    psi = levy_khintchine_all(a, 2)
    for j in range(1, psi.size):
        s = character_level(tree, j, 2)
        assert math.isclose(psi[j].real, float(m.lam(s - 1)), rel_tol=1e-12)
        assert abs(psi[j].imag) < 1e-12


def test_exponent_matches_heat_transform():
    tree = LeveledTree.noncompact(2, (-4, 4))
    a = LevySequence(tree, {k: Fraction(2) ** k for k in range(-4, 5)})
    model = levy_to_eigenvalues(a)
    psi = levy_khintchine_all(a, 4)
    t = 1e-3
    mu = heat_measure(model, t, 4)
    muhat = fourier_transform(tree, mu.ball_weights(), 4)
    est = -np.log(muhat[1:].real) / t
    assert np.allclose(est, psi[1:].real, rtol=1e-4)
