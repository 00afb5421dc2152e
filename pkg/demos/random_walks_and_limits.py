"""Random walks on trees and the diffusions their convolution powers converge to.

Run with ``python demos/random_walks_and_limits.py``.
"""

import math
from fractions import Fraction

import numpy as np

from ultradiff.converge import check_stable, converge_ft41, converge_ft46, ft43_limit_measure
from ultradiff.randwalk import FT41, boundary_generator, build_kernel, first_passage
from ultradiff.spherical import LevySequence
from ultradiff.tree import LeveledTree


def main():
    # nearest-neighbour walk on the binary tree: up with 1/3, each child 1/3
    tree = LeveledTree.compact([2] * 5)
    table = first_passage(build_kernel(FT41, tree, p=Fraction(1, 3)))
    print("Green function to the root, one vertex per level:")
    for k in range(5):
        print(f"  level {k}: {table.green_to_root(tree.origin(k))}")

    # the boundary process generated by the walk has eigenvalues 1/G(v, o)
    gen = boundary_generator(table, 4, exact=False)
    spectrum = sorted({round(float(v), 9) + 0.0 for v in np.linalg.eigvals(gen).real})
    print("boundary generator eigenvalues:", spectrum)

    # first-return laws, raised to the right power, approach exp(-t lambda)
    rep = converge_ft41(Fraction(1, 3), 1, range(2, 13))
    print("first-shell transform against e^-1:")
    for n in (2, 4, 8, 12):
        print(f"  n={n:>2}: {rep.value(n, 1):.8f}  (target {math.exp(-1):.8f})")

    # walks driven by a Levy sequence converge to the matching semigroup
    noncompact = LeveledTree.noncompact(2, (-4, 9))
    a = LevySequence(noncompact, {k: Fraction(4) ** k for k in range(-4, 10)})
    sup = converge_ft46(a, 1, range(1, 9)).sup_errors()
    print("Levy-driven walk, sup error by n:", {n: f"{e:.2e}" for n, e in sup.items()})

    # the limit of the reflecting p-adic walk is a stable law
    mu = ft43_limit_measure(2, 1, (-8, 5))
    rep = check_stable(1, 2, mu)
    print(f"stable fit: -log(mu^) = c |xi|, c = {rep.c:.6f}, relative residual {rep.residual:.1e}")


if __name__ == "__main__":
    main()
