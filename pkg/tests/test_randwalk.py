import math
from fractions import Fraction

import numpy as np
import pytest

from ultradiff.hierlap import LocallyConstantFunction
from ultradiff.randwalk import (FT41, FT43, FT46, FT47, WalkError, boundary_energy,
                                boundary_generator, boundary_hitting_ft41, build_kernel,
                                dirichlet_energy, first_passage, first_return_distribution,
                                first_return_shells, fit_kigami_constant, ft41_first_return_shells,
                                harmonic_measure, hitting_frequencies, kigami_limit,
                                kigami_profile, last_exit_distribution,
                                limit_distribution_ft46, limit_distribution_ft47, martin_kernel,
                                naim_kernel, rescaled_naim, sample_boundary,
                                shells_from_ball_distribution, simulate)
from ultradiff.spherical import LevyMeasureAnisotropic, LevySequence, spherical_transform
from ultradiff.tree import CoincidentPointsError, LeveledTree

F = Fraction


def ft46_setup(degrees=2, window=(-3, 4), base=4):
    tree = LeveledTree.noncompact(degrees, window)
    a = LevySequence(tree, {k: F(base) ** k for k in range(window[0], window[1] + 1)})
    return tree, a, build_kernel(FT46, levy=a)


# -- kernels --


def test_ft41_rows(binary4):
    k = build_kernel(FT41, binary4, p=F(1, 3))
    assert dict(k.row(binary4.root())) == {binary4.vertex([0]): F(1, 2), binary4.vertex([1]): F(1, 2)}
    row = dict(k.row(binary4.vertex([1, 0])))
    assert set(row.values()) == {F(1, 3)} and len(row) == 3
    k.check_stochastic()


def test_ft43_rows(dyadic):
    k = build_kernel(FT43, dyadic, alpha=1)
    u = dyadic.vertex([0, 1, 1])
    assert k.up(u) == F(1, 3)
    assert all(k.down(u, c) == F(1, 3) for c in dyadic.children(u))
    assert k.is_reversible()


def test_ft46_rows():
    tree, a, k = ft46_setup()
    assert a.ratio(0) == F(1, 4) and k.up(tree.vertex([0, 1, 0])) == F(1, 5)
    row = dict(k.row(tree.origin(0)))
    assert tree.origin(1) not in row
    assert sum(row.values()) == 1
    k.check_stochastic()


def test_ft41_rejects_bad_parameter(binary4):
    with pytest.raises(WalkError):
        build_kernel(FT41, binary4, p=F(2, 3))


# -- first passage --


@pytest.mark.parametrize("q,p", [(2, F(1, 3)), (3, F(1, 4))])
def test_ft41_green_to_root(q, p):
    tree = LeveledTree.compact([q] * 5)
    table = first_passage(build_kernel(FT41, tree, p=p))
    for u in tree.iter_vertices(0, 5):
        assert table.green_to_root(u) == F(q) ** (1 - u.level) / (q - 1)
    assert table.green_to_root(tree.vertex([0, 1])) == (F(1, 2) if q == 2 else F(1, 6))


def test_ft46_upward_hitting_is_level_ratio():
    tree, a, k = ft46_setup()
    table = first_passage(k)
    assert set(table.up.values()) == {F(1, 4)}


def test_ft43_downward_hitting_at_window_top(dyadic):
    k = build_kernel(FT43, dyadic, alpha=1)
    assert k.tail_down_hitting_top() == F(1, 2)


def test_green_at_root_against_visit_counts():
    tree = LeveledTree.compact([2] * 30)
    kernel = build_kernel(FT41, tree, p=F(1, 3))
    shallow = first_passage(build_kernel(FT41, LeveledTree.compact([2] * 4), p=F(1, 3)))
    expected = float(shallow.green[shallow.root])
    visits, steps, runs = [], 0, 0
    while steps < 10 ** 6:
        path = simulate(kernel, tree.root(), 99, 10 ** 4, index=runs)
        visits.append(sum(1 for v in path if v == tree.root()))
        steps += len(path)
        runs += 1
    mean = np.mean(visits)
    se = np.std(visits, ddof=1) / math.sqrt(len(visits))
    assert abs(mean - expected) < 3 * se


# -- FT41 first return --


@pytest.mark.parametrize("degrees,p", [([2, 2, 2], F(1, 3)), ([3, 3, 3, 3], F(1, 4)), ([2, 3, 2, 3], F(1, 4))])
def test_ft41_closed_form_against_absorbing_chain(degrees, p):
    tree = LeveledTree.compact(degrees)
    n = len(degrees)
    k = build_kernel(FT41, tree, truncation=n, p=p)
    for u in tree.enumerate_level(n)[:3]:
        closed = boundary_hitting_ft41(k, u)
        assert closed == first_return_distribution(k, u)
        assert sum(closed.values()) == 1


def test_ft41_spherical_transform_formula():
    tree = LeveledTree.compact([2] * 5)
    k = build_kernel(FT41, tree, truncation=5, p=F(1, 3))
    sigma = ft41_first_return_shells(k)
    assert sigma == first_return_shells(k)
    assert sigma == shells_from_ball_distribution(tree, 5, boundary_hitting_ft41(k, tree.origin(5)))
    for kk in range(1, 5):
        assert spherical_transform(sigma, kk) == 1 - F(1, 2 ** (5 - kk + 1) - 1)


def test_ft43_first_return_transform():
    tree = LeveledTree.noncompact(2, (-4, 3))
    k = build_kernel(FT43, tree, alpha=1)
    for n in (1, 2, 3):
        sigma = first_return_shells(k, n)
        # landing mass above the window is kept in ``outer``; only the far tail is cut
        assert abs(float(sigma.total()) - 1) < 1e-15
        for kk in range(tree.kmin + 1, n):
            assert math.isclose(float(spherical_transform(sigma, kk)), 1 - 1 / (2 ** (n + 1 - kk) - 1),
                                rel_tol=1e-14)


# -- FT46 / FT47 last exit --


def test_ft46_limit_masses():
    tree, a, k = ft46_setup()
    nu = limit_distribution_ft46(k, 2)
    for kk in range(tree.kmin, 2):
        assert nu.shells[kk - tree.kmin] == 3 * F(4) ** kk / 16
    assert nu.total() == 1


def test_ft46_against_last_exit_solve_mixed_degrees():
    tree = LeveledTree.noncompact([2, 3, 2, 3, 2], (-2, 3))
    a = LevySequence(tree, {-2: F(1, 9), -1: F(1, 3), 0: F(1), 1: F(3), 2: F(9), 3: F(27)})
    k = build_kernel(FT46, levy=a)
    for n in range(tree.kmin + 1, k.deepest_level() + 1):
        solve = last_exit_distribution(k, n)
        assert shells_from_ball_distribution(tree, n, solve) == limit_distribution_ft46(k, n)
        assert last_exit_distribution(k, n, "truncated") == solve


def test_ft47_spherical_reduces_to_ft46():
    tree, a, k46 = ft46_setup()
    k47 = build_kernel(FT47, measure=LevyMeasureAnisotropic.from_levy(a, 0))
    for n in (-1, 0, 1, 2):
        nu47 = limit_distribution_ft47(k47, n)
        assert shells_from_ball_distribution(tree, n, nu47) == limit_distribution_ft46(k46, n)


def test_ft47_lemma_with_zero_mass_subtrees():
    tree = LeveledTree.noncompact([2, 3, 2, 2], (-2, 2))
    a = LevySequence(tree, {-2: F(1), -1: F(4), 0: F(16), 1: F(64), 2: F(256)})
    masses = {u: F(0) for u in tree.enumerate_level(0) if u.digits != (0, 0)}
    masses[tree.vertex([1, 1])] = F(3)
    masses[tree.vertex([0, 2])] = F(12)
    kernel = build_kernel(FT47, measure=LevyMeasureAnisotropic(a, 0, masses))
    for n in (-1, 0, 1):
        exact = limit_distribution_ft47(kernel, n)
        assert last_exit_distribution(kernel, n) == {u: w for u, w in exact.items() if w}


# -- boundary theory --


def test_martin_kernel():
    tree = LeveledTree.compact([2, 3, 2, 3, 2])
    kernel = build_kernel(FT41, tree, p=F(1, 4))
    table = first_passage(kernel)
    x = tree.point([1, 2, 0, 1, 1])
    assert martin_kernel(table, tree.root(), x) == 1
    for lev in range(5):
        u = tree.ancestor(x, lev)
        assert martin_kernel(table, u, x) == 1 / table.hitting(tree.root(), u)
    for u in tree.iter_vertices(0, 4):
        assert sum(p * martin_kernel(table, v, x) for v, p in kernel.row(u)) == martin_kernel(table, u, x)


def test_harmonic_measure_is_haar_for_symmetric_walk(binary4):
    table = first_passage(build_kernel(FT41, binary4, p=F(1, 3)))
    for lev in (1, 2, 3):
        nus = [harmonic_measure(table, u) for u in binary4.enumerate_level(lev)]
        assert nus == [binary4.shell_mass(lev)] * len(nus)
    assert sum(harmonic_measure(table, u) for u in binary4.enumerate_level(1)) == 1


def test_naim_kernel_symmetry_and_diagonal(binary4):
    table = first_passage(build_kernel(FT41, binary4, p=F(1, 3)))
    x, y = binary4.point([0, 1, 1]), binary4.point([1, 0, 0, 1])
    assert naim_kernel(table, x, y) == naim_kernel(table, y, x)
    with pytest.raises(CoincidentPointsError):
        naim_kernel(table, x, x)


def test_boundary_generator_eigenvalues():
    tree = LeveledTree.compact([2] * 5)
    table = first_passage(build_kernel(FT41, tree, p=F(1, 3)))
    gen = boundary_generator(table, 4)
    ev = sorted(set(np.round(np.linalg.eigvals(gen.astype(float)).real, 9)))
    assert ev == [0, 0.5, 1, 2, 4]
    assert [1 / table.green_to_root(tree.origin(k)) for k in range(4)] == [F(1, 2), 1, 2, 4]


def test_eigenfunction_energy():
    tree = LeveledTree.compact([2, 3, 2, 2])
    table = first_passage(build_kernel(FT41, tree, p=F(1, 3)))
    gen = boundary_generator(table, 4)
    nu = np.array([harmonic_measure(table, b) for b in tree.enumerate_level(4)], dtype=object)
    for v, u in [(tree.root(), tree.vertex([1])), (tree.vertex([1, 2]), tree.vertex([1, 2, 0]))]:
        f = LocallyConstantFunction.eigenfunction(tree, v, u, 4).values
        lam = 1 / table.green_to_root(v)
        assert (nu * f * gen.dot(f)).sum() == lam * (nu * f * f).sum()


def test_douglas_identity_random_boundary_data(binary4):
    killed = first_passage(build_kernel(FT41, binary4, p=F(1, 3)), killed=4)
    rng = np.random.default_rng(0)
    f = {b: F(int(rng.integers(-5, 6))) for b in binary4.enumerate_level(4)}
    assert dirichlet_energy(killed, f) == boundary_energy(killed, f)
    const = {b: F(3) for b in binary4.enumerate_level(4)}
    assert dirichlet_energy(killed, const) == 0 == boundary_energy(killed, const)


def test_rescaled_naim_kernel_stabilises():
    tree = LeveledTree.noncompact(2, (-5, 3))
    table = first_passage(build_kernel(FT43, tree, alpha=1))
    x, y = tree.point({-1: 1, 1: 1}), tree.point({-1: 1, 0: 1})
    val, shift = kigami_limit(table, x, y)
    # the kernel is stable once the root lies above the branch point of x ^ y off the geodesic
    w = tree.confluent(tree.confluent(x, y), tree.zero()).level
    assert w == -1 and shift <= -w
    assert all(rescaled_naim(table, x, y, s) == val for s in range(shift, -tree.kmin + 1))


def test_rescaled_naim_depends_on_confluent_only():
    tree = LeveledTree.noncompact(2, (-5, 3))
    table = first_passage(build_kernel(FT43, tree, alpha=1))
    x, y = tree.point({-2: 1, 0: 1}), tree.point({-2: 1, 1: 1})
    x2, y2 = tree.point({-2: 1, 0: 1, 2: 1}), tree.point({-2: 1, 1: 1, 2: 1})
    assert kigami_limit(table, x, y)[0] == kigami_limit(table, x2, y2)[0]


def test_kigami_profile_constant():
    tree = LeveledTree.noncompact(2, (-5, 3))
    table = first_passage(build_kernel(FT43, tree, alpha=1))
    pairs = [(tree.point({-1: 1}), tree.point({-1: 1, 0: 1})),
             (tree.point({-3: 1, 0: 1}), tree.point({-3: 1, 1: 1})),
             (tree.point({1: 1}), tree.point({2: 1})),
             (tree.zero(), tree.point({-2: 1}))]
    ratios = fit_kigami_constant(table, pairs)
    assert len(set(ratios)) == 1 and ratios[0] > 0
    assert kigami_profile(table, tree.origin(0)) > 0


# -- simulation --


def test_simulation_is_deterministic(binary4):
    k = build_kernel(FT41, binary4, p=F(1, 3), truncation=4)
    a = simulate(k, binary4.vertex([0, 1]), 2024, 500)
    assert a == simulate(k, binary4.vertex([0, 1]), 2024, 500)
    assert a != simulate(k, binary4.vertex([0, 1]), 2025, 500)


def test_ft41_upward_frequency():
    tree = LeveledTree.compact([2] * 6)
    k = build_kernel(FT41, tree, p=F(1, 3), truncation=6)
    path = simulate(k, tree.vertex([0, 0, 1]), 5, 200_000)
    moves = [(u, v) for u, v in zip(path, path[1:]) if 0 < u.level < 6]
    ups = sum(1 for u, v in moves if v.level < u.level)
    n = len(moves)
    assert abs(ups / n - 1 / 3) < 3 * math.sqrt((1 / 3) * (2 / 3) / n)


def test_ft46_shell_hits_against_exact_masses():
    tree, a, k = ft46_setup(window=(-3, 6))
    n = 1
    table = first_passage(k)
    samples = sample_boundary(k, table, tree.origin(n - 1), n, 13, 100_000)
    exact = shells_from_ball_distribution(tree, n, limit_distribution_ft47(k, n))
    counts = hitting_frequencies(samples, tree, n)
    est = shells_from_ball_distribution(tree, n, {u: F(c, 100_000) for u, c in counts.items()})
    for p_exact, p_mc in zip(exact.shells + (exact.outer,), est.shells + (est.outer,)):
        se = math.sqrt(float(p_exact) * (1 - float(p_exact)) / 100_000)
        assert abs(float(p_mc) - float(p_exact)) <= 3 * se
