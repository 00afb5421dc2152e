"""Spectrum and heat kernel of a hierarchical Laplacian on a small mixed-degree tree.

Run with ``python demos/heat_on_a_tree.py``.
"""

from fractions import Fraction

import numpy as np

from ultradiff.hierlap import SpectralModel, heat_kernel_matrix, heat_profile, truncated_generator
from ultradiff.tree import LeveledTree


def main():
    tree = LeveledTree.compact([2, 3, 2, 3])
    model = SpectralModel(tree, {0: Fraction(1), 1: Fraction(3), 2: Fraction(10), 3: Fraction(30)})

    print("eigenvalue  multiplicity")
    for lam, mult in model.spectrum(4):
        print(f"{str(lam):>10}  {mult}")

    # the heat density depends only on the level where two points branch
    for t in (0.01, 0.1, 1.0, 10.0):
        prof = heat_profile(model, t)
        shells = ", ".join(f"{d:.4f}" for d in prof.shells)
        print(f"t={t:<5} shells [{shells}] centre {prof.center:.4f} mass {prof.mass:.12f}")

    # the same kernel, written as a matrix on the 36 leaves, is exp(-t L)
    gen = truncated_generator(model, 4)
    vals = np.linalg.eigvalsh(gen)
    print("generator eigenvalues (rounded):", sorted({round(float(v), 9) + 0.0 for v in vals}))
    row = heat_kernel_matrix(model, 1.0, 4)[0]
    print("row sums of the transition matrix at t=1:", row.sum())


if __name__ == "__main__":
    main()
