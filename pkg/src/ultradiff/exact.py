"""Exact rational linear algebra for tree-structured systems.

The absorbing-chain oracles solve ``(I - Q) X = R`` where ``Q`` is the
transient block of a nearest-neighbour walk.  On a tree these systems are
sparse and eliminating deepest vertices first produces no fill-in, so a
dictionary-based Gaussian elimination in :class:`~fractions.Fraction`
arithmetic stays cheap for the few thousand unknowns used in tests.
"""
from __future__ import annotations

from collections import defaultdict
from fractions import Fraction
from typing import Hashable, Mapping, Sequence

import numpy as np


class SingularSystemError(ArithmeticError):
    pass


def solve_sparse(rows: Mapping[Hashable, Mapping[Hashable, Fraction]],
                 rhs: Mapping[Hashable, Mapping[Hashable, Fraction]],
                 order: Sequence[Hashable] | None = None) -> dict:
    """Solve ``A X = B`` by Gauss-Jordan elimination on dictionaries.

    Exact when the coefficients are Fractions; floats work as well.

    Parameters
    ----------
    rows : mapping unknown -> {unknown: coefficient}
        Row ``i`` of ``A`` (the equation attached to unknown ``i``).
    rhs : mapping unknown -> {column: value}
        Row ``i`` of ``B``; columns are arbitrary labels.
    order : sequence of unknowns, optional
        Pivot order.  For tree Laplacians pass deepest vertices first.

    Returns
    -------
    dict
        ``{unknown: {column: value}}`` with zero entries dropped.
    """
    A = {i: {j: v for j, v in r.items() if v} for i, r in rows.items()}
    B = {i: {c: v for c, v in rhs.get(i, {}).items() if v} for i in A}
    cols = defaultdict(set)
    for i, r in A.items():
        for j in r:
            cols[j].add(i)
    order = list(A) if order is None else list(order)
    done = []
    for p in order:
        # pivot on the equation of unknown p if it still carries p
        row = A[p]
        piv = row.get(p)
        if not piv:
            raise SingularSystemError(f"zero pivot at {p!r}")
        inv = 1 / piv
        for j in row:
            row[j] *= inv
        for c in B[p]:
            B[p][c] *= inv
        for i in list(cols[p]):
            if i == p:
                continue
            ri = A[i]
            f = ri.get(p)
            if not f:
                continue
            for j, v in row.items():
                nv = ri.get(j, 0) - f * v
                if nv:
                    ri[j] = nv
                    cols[j].add(i)
                else:
                    ri.pop(j, None)
                    cols[j].discard(i)
            bi = B[i]
            for c, v in B[p].items():
                nv = bi.get(c, 0) - f * v
                if nv:
                    bi[c] = nv
                else:
                    bi.pop(c, None)
        cols[p] = {p}
        done.append(p)
    # back substitution is implicit: every column p now only lives in row p
    for i, r in A.items():
        extra = [j for j in r if j != i]
        if extra:
            raise SingularSystemError(f"elimination incomplete at {i!r}")
    return {i: dict(B[i]) for i in A}


def fraction_array(values) -> np.ndarray:
    """Object array of Fractions (exact numpy containers)."""
    arr = np.empty(len(values), dtype=object)
    arr[:] = [Fraction(v) for v in values]
    return arr


def is_exact(arr: np.ndarray) -> bool:
    return arr.dtype == object
