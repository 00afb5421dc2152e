"""Spherical functions, spherical measures, Lévy data and group arithmetic.

The spherical function ``phi_k`` equals 1 on ``B_k``, ``-1/(q_{k-1} - 1)``
on the shell ``B_{k-1} minus B_k`` and 0 elsewhere; it is ``f_{v,u}``
divided by ``1/m_k - 1/m_{k-1}`` for the geodesic pair ``v = o_{k-1}``,
``u = o_k``.  Measures invariant under the stabiliser of ``0`` are
determined by their shell weights, and integrating against ``phi_k`` turns
convolution into multiplication.

Group arithmetic treats a boundary point as a mixed-radix number whose
level-``kmin`` digit is least significant.  On the window the ball
``B_kmin`` modulo ``B_R`` is then the cyclic group of order
``N = q_kmin ... q_{R-1}`` and its characters are
``chi_j(x) = exp(2 pi i j rank(x) / N)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from typing import Mapping, Sequence

import numpy as np

from .hierlap import SpectralError, SpectralModel
from .tree import BoundaryPoint, LeveledTree, TreeError, Vertex


class MeasureError(ValueError):
    """Invalid measure data or an inversion that produced negative mass."""


# -- spherical functions ----------------------------------------------------------


def shell_of(tree: LeveledTree, x: BoundaryPoint) -> int:
    """Level ``k`` with ``x`` in ``B_k minus B_{k+1}``; ``kmax`` when ``x`` is in ``B_kmax``."""
    for k, d in zip(range(tree.kmin, tree.kmax), x.digits):
        if d:
            return k
    return tree.kmax


def phi_shell_value(tree: LeveledTree, k: int, shell: int):
    """Value of ``phi_k`` on the shell ``B_shell minus B_{shell+1}``."""
    if shell >= k:
        return Fraction(1)
    if shell == k - 1:
        return Fraction(-1, tree.q(k - 1) - 1)
    return Fraction(0)


def phi_eval(tree: LeveledTree, k: int, x: BoundaryPoint):
    """``phi_k(x)``; in compact mode ``phi_0`` is the constant 1."""
    if tree.compact_mode and k == 0:
        return Fraction(1)
    if not tree.kmin <= k <= tree.kmax:
        raise TreeError(f"level {k} is outside the window {tree.window}")
    s = shell_of(tree, x)
    if s == tree.kmax:
        return Fraction(1)
    return phi_shell_value(tree, k, s)


# -- spherical measures ----------------------------------------------------------


@dataclass(frozen=True)
class SphericalMeasure:
    """A measure constant on the shells around ``0``, at resolution ``level``.

    ``shells[i]`` is the mass of ``B_k minus B_{k+1}`` for ``k = kmin + i``,
    ``center`` the mass of ``B_level`` (spread uniformly over it) and
    ``outer`` the mass outside the window ball ``B_kmin``.
    """

    tree: LeveledTree
    level: int
    shells: tuple
    center: object
    outer: object = Fraction(0)

    def __post_init__(self):
        tree = self.tree
        if not tree.kmin <= self.level <= tree.kmax:
            raise TreeError(f"resolution {self.level} is outside the window {tree.window}")
        shells = tuple(self.shells)
        if len(shells) != self.level - tree.kmin:
            raise MeasureError(f"expected {self.level - tree.kmin} shell weights, got {len(shells)}")
        object.__setattr__(self, "shells", shells)
        for w in shells + (self.center, self.outer):
            if w < 0:
                raise MeasureError(f"negative weight {w}")

    @classmethod
    def from_ball_masses(cls, tree: LeveledTree, level: int, balls: Sequence,
                         outer=Fraction(0)) -> "SphericalMeasure":
        """From ``balls[i] = mu(B_{kmin + i})`` for ``i = 0 .. level - kmin``."""
        balls = list(balls)
        shells = [balls[i] - balls[i + 1] for i in range(len(balls) - 1)]
        return cls(tree, level, tuple(shells), balls[-1], outer)

    @classmethod
    def unit(cls, tree: LeveledTree, level: int) -> "SphericalMeasure":
        """Normalised Haar measure on ``B_level``: the convolution unit at this resolution."""
        return cls(tree, level, (Fraction(0),) * (level - tree.kmin), Fraction(1))

    def total(self):
        return sum(self.shells, self.center * 0) + self.center + self.outer

    def ball_mass(self, k: int):
        """``mu(B_k)`` for window levels ``k <= level``."""
        i = k - self.tree.kmin
        if not 0 <= i <= len(self.shells):
            raise TreeError(f"level {k} is outside [kmin, {self.level}]")
        return sum(self.shells[i:], self.center * 0) + self.center

    def density(self, k: int):
        """Density with respect to ``m`` on the shell ``B_k minus B_{k+1}``."""
        tree = self.tree
        return self.shells[k - tree.kmin] / (tree.shell_mass(k) - tree.shell_mass(k + 1))

    def ball_weights(self) -> np.ndarray:
        """Masses of the level-``level`` balls in lexicographic order."""
        tree, n = self.tree, self.level
        size = tree.check_size(n)
        mn = tree.shell_mass(n)
        idx = np.arange(size)
        shell = np.full(size, n, dtype=np.int64)
        for k in range(n - 1, tree.kmin - 1, -1):
            block = size // tree.level_size(k + 1)
            shell[idx // block != 0] = np.minimum(shell[idx // block != 0], k)
        lut = []
        for k in range(tree.kmin, n):
            count = (tree.shell_mass(k) - tree.shell_mass(k + 1)) / mn
            lut.append(self.shells[k - tree.kmin] / count)
        lut.append(self.center)
        out = np.empty(size, dtype=object)
        out[:] = [lut[s - tree.kmin] for s in shell]
        return out

    def as_float(self) -> "SphericalMeasure":
        return SphericalMeasure(self.tree, self.level, tuple(float(w) for w in self.shells),
                                float(self.center), float(self.outer))


def spherical_transform(mu: SphericalMeasure, k: int):
    """``<mu, phi_k>`` using the shell values of ``phi_k``.

    Levels at or above ``kmin`` need the mass outside the window to be
    zero, since ``phi_k`` is unknown there; compact trees have no outside.
    """
    tree = mu.tree
    if k <= tree.kmin:
        if mu.outer:
            raise MeasureError(f"transform at level {k} needs the measure outside the window")
        return mu.total()
    if k > mu.level:
        return mu.center
    val = mu.ball_mass(k)
    return val - mu.shells[k - 1 - tree.kmin] / (tree.q(k - 1) - 1)


def _balls_from_transforms(tree: LeveledTree, n: int, top, transforms: Mapping[int, object]) -> list:
    # phi_k is supported in B_{k-1}, so the system is triangular:
    # mu(B_k) = ((q_{k-1} - 1) tau_k + mu(B_{k-1})) / q_{k-1}
    balls = [top]
    for k in range(tree.kmin + 1, n + 1):
        q = tree.q(k - 1)
        balls.append(((q - 1) * transforms[k] + balls[-1]) / q)
    return balls


def convolve(mu: SphericalMeasure, nu: SphericalMeasure, tol: float = 1e-12) -> SphericalMeasure:
    """Convolution of the restrictions of ``mu`` and ``nu`` to the window ball.

    Transforms are multiplied and the triangular system for the ball masses
    is solved.  Mass outside the window is carried as the product of the
    total masses minus the window part.  Exact on rational input; on float
    input weights within ``tol`` below zero are clipped and larger
    violations raise :class:`MeasureError` naming the residual.
    """
    if mu.tree.window != nu.tree.window or mu.level != nu.level:
        raise MeasureError("measures must share window and resolution")
    tree, n = mu.tree, mu.level
    top = mu.ball_mass(tree.kmin) * nu.ball_mass(tree.kmin)
    taus = {k: _window_transform(mu, k) * _window_transform(nu, k) for k in range(tree.kmin + 1, n + 1)}
    balls = _balls_from_transforms(tree, n, top, taus)
    outer = mu.total() * nu.total() - top
    shells = [balls[i] - balls[i + 1] for i in range(len(balls) - 1)]
    fixed = []
    for w in shells + [balls[-1]]:
        if w < 0:
            if isinstance(w, float) and w > -tol:
                w = 0.0
            else:
                raise MeasureError(f"inversion produced negative weight {w} (residual beyond {tol})")
        fixed.append(w)
    return SphericalMeasure(tree, n, tuple(fixed[:-1]), fixed[-1], outer)


def _window_transform(mu: SphericalMeasure, k: int):
    # transform of the restriction to B_kmin (phi_k vanishes outside for k > kmin)
    return spherical_transform(mu, k)


def heat_measure(model: SpectralModel, t: Real, n: int) -> SphericalMeasure:
    """Heat-kernel law at time ``t`` as shell weights at resolution ``n``."""
    from .hierlap import heat_profile

    tree = model.tree
    prof = heat_profile(model, t, n)
    w = prof.shell_weights(tree)
    return SphericalMeasure(tree, n, tuple(float(x) for x in w), float(prof.center * float(tree.shell_mass(n))))


# -- Lévy sequences ---------------------------------------------------------------


@dataclass(frozen=True)
class LevySequence:
    """Tail masses ``a_k = F(outside B_k)`` of a spherical Lévy measure on the window."""

    tree: LeveledTree
    a: Mapping[int, Real]

    def __post_init__(self):
        tree = self.tree
        vals = {}
        for k in range(tree.kmin, tree.kmax + 1):
            if k not in self.a:
                raise SpectralError(f"Lévy tail a_{k} is missing")
            v = self.a[k]
            vals[k] = Fraction(v) if isinstance(v, int) else v
        for k in range(tree.kmin, tree.kmax):
            if vals[k] < 0:
                raise SpectralError(f"a_{k} = {vals[k]} is negative")
            if vals[k] > vals[k + 1]:
                raise SpectralError(f"a_{k} = {vals[k]} exceeds a_{k + 1} = {vals[k + 1]}")
        object.__setattr__(self, "a", vals)

    def __getitem__(self, k: int):
        return self.a[k]

    def is_nondegenerate(self) -> bool:
        return all(v > 0 for v in self.a.values())

    def ratio(self, k: int):
        """``f_k = a_k / a_{k+1}``."""
        return self.a[k] / self.a[k + 1]

    def shell_mass(self, k: int):
        """``F(B_k minus B_{k+1}) = a_{k+1} - a_k``."""
        return self.a[k + 1] - self.a[k]


def levy_to_eigenvalues(a: LevySequence) -> SpectralModel:
    """``lam_k = (q_k a_{k+1} - a_k) / (q_k - 1)`` for ``kmin <= k < kmax``."""
    tree = a.tree
    lam = {}
    for k in range(tree.kmin, tree.kmax):
        q = tree.q(k)
        lam[k] = (q * a[k + 1] - a[k]) / (q - 1)
    return SpectralModel(tree, lam)


def eigenvalues_to_levy(model: SpectralModel, a_kmin) -> LevySequence:
    """Invert :func:`levy_to_eigenvalues` given the tail mass at ``kmin``.

    Raises :class:`SpectralError` when the eigenvalues are not produced by
    any nondecreasing nonnegative tail sequence (``lam_k < a_k`` somewhere).
    """
    tree = model.tree
    a = {tree.kmin: a_kmin}
    for k in range(tree.kmin, tree.kmax):
        q = tree.q(k)
        if model.lam(k) < a[k]:
            raise SpectralError(f"lambda_{k} = {model.lam(k)} < a_{k} = {a[k]}: not a spherical Lévy model")
        a[k + 1] = ((q - 1) * model.lam(k) + a[k]) / q
    return LevySequence(tree, a)


def taibleson_levy(p: int, alpha: Real, window: tuple[int, int]) -> LevySequence:
    """Tail masses ``a_k = (p - 1) p^(k alpha) / (p^(alpha+1) - 1)`` giving ``lam_k = p^(k alpha)``."""
    tree = LeveledTree.noncompact(p, window, metric_base=p)
    if float(alpha).is_integer():
        al = int(alpha)
        c = Fraction(p - 1, p ** (al + 1) - 1)
        a = {k: c * Fraction(p) ** (k * al) for k in range(tree.kmin, tree.kmax + 1)}
    else:
        c = (p - 1) / (p ** (alpha + 1) - 1)
        a = {k: c * float(p) ** (k * alpha) for k in range(tree.kmin, tree.kmax + 1)}
    return LevySequence(tree, a)


# -- anisotropic Lévy measures ----------------------------------------------------


def subtree_index(tree: LeveledTree, u: Vertex) -> int | None:
    """Level ``k`` with ``u`` in the subtree hanging off ``o_k``; ``None`` for ``u = o_level``."""
    for k, d in zip(range(tree.kmin, u.level), u.digits):
        if d:
            return k
    return None


@dataclass(frozen=True)
class LevyMeasureAnisotropic:
    """Lévy measure given by ball masses ``F(u)`` down to level ``depth``.

    ``masses`` holds ``F(u)`` for every level-``depth`` vertex off the
    geodesic; balls below that level share their parent's mass uniformly.
    The Lévy sequence supplies the tail ``a_kmin`` and the shell masses of
    the levels below ``depth``, where ``F`` is spherical.
    """

    levy: LevySequence
    depth: int
    masses: Mapping[Vertex, Real]
    _cache: dict = field(default=None, repr=False, compare=False, hash=False)

    def __post_init__(self):
        tree = self.levy.tree
        if not tree.kmin < self.depth <= tree.kmax:
            raise TreeError(f"depth {self.depth} must lie in ({tree.kmin}, {tree.kmax}]")
        sums = {k: 0 for k in range(tree.kmin, self.depth)}
        masses = {}
        for u, w in dict(self.masses).items():
            if u.level != self.depth:
                raise MeasureError(f"{u} is not at depth {self.depth}")
            k = subtree_index(tree, u)
            if k is None:
                raise MeasureError(f"{u} lies on the geodesic and has infinite mass")
            w = Fraction(w) if isinstance(w, int) else w
            if w < 0:
                raise MeasureError(f"F({u}) = {w} is negative")
            masses[u] = w
            sums[k] += w
        for k, s in sums.items():
            if s != self.levy.shell_mass(k):
                raise MeasureError(
                    f"masses off o_{k} sum to {s} but the tail sequence requires {self.levy.shell_mass(k)}"
                )
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "_cache", {})

    @property
    def tree(self) -> LeveledTree:
        return self.levy.tree

    @classmethod
    def from_levy(cls, levy: LevySequence, depth: int) -> "LevyMeasureAnisotropic":
        """Spherical measure: each shell spread uniformly over its balls."""
        tree = levy.tree
        masses = {}
        for u in tree.enumerate_level(depth):
            k = subtree_index(tree, u)
            if k is not None:
                masses[u] = spherical_ball_mass(levy, u)
        return cls(levy, depth, masses)

    def mass(self, u: Vertex):
        """``F(u)``; for ``u = o_k`` the aggregated shell mass ``a_{k+1} - a_k``."""
        if u in self._cache:
            return self._cache[u]
        tree = self.tree
        k = subtree_index(tree, u)
        if k is None:
            val = self.levy.shell_mass(u.level)
        elif u.level == self.depth:
            val = self.masses.get(u, 0)
        elif u.level < self.depth:
            val = sum((self.mass(c) for c in tree.children(u)), 0)
        elif k < self.depth:
            anc = Vertex(self.depth, u.digits[: self.depth - tree.kmin])
            val = self.mass(anc) * tree.shell_mass(u.level) / tree.shell_mass(self.depth)
        else:
            val = spherical_ball_mass(self.levy, u)
        self._cache[u] = val
        return val

    def level_masses(self, level: int) -> np.ndarray:
        """``F(u)`` for every level-``level`` ball in lexicographic order, 0 for ``o_level``."""
        tree = self.tree
        out = np.empty(tree.check_size(level), dtype=object)
        for i, u in enumerate(tree.enumerate_level(level)):
            out[i] = 0 if subtree_index(tree, u) is None else self.mass(u)
        return out


def spherical_ball_mass(levy: LevySequence, u: Vertex):
    """Mass of the ball ``u`` under the spherical Lévy measure with tails ``a``."""
    tree = levy.tree
    k = subtree_index(tree, u)
    if k is None:
        raise MeasureError(f"{u} lies on the geodesic")
    shell = tree.shell_mass(k) - tree.shell_mass(k + 1)
    return levy.shell_mass(k) * tree.shell_mass(u.level) / shell


# -- group arithmetic -------------------------------------------------------------


def _weights(tree: LeveledTree, level: int) -> list[int]:
    w, acc = [], 1
    for j in range(tree.kmin, level):
        w.append(acc)
        acc *= tree.q(j)
    return w


def quotient_order(tree: LeveledTree, level: int | None = None) -> int:
    level = tree.kmax if level is None else level
    return math.prod(tree.q(j) for j in range(tree.kmin, level))


def rank(tree: LeveledTree, x: BoundaryPoint | Vertex, level: int | None = None) -> int:
    """Mixed-radix value of the digits below ``level``, least significant first."""
    level = tree.kmax if level is None else level
    return sum(d * w for d, w in zip(x.digits, _weights(tree, level)))


def from_rank(tree: LeveledTree, r: int) -> BoundaryPoint:
    digits = []
    for j in range(tree.kmin, tree.kmax):
        r, d = divmod(r, tree.q(j))
        digits.append(d)
    return BoundaryPoint(tuple(digits))


def group_add(tree: LeveledTree, x: BoundaryPoint, y: BoundaryPoint) -> BoundaryPoint:
    """Digit-wise sum with carries towards deeper levels; the carry out of the window is dropped."""
    digits, carry = [], 0
    for j, a, b in zip(range(tree.kmin, tree.kmax), x.digits, y.digits):
        carry, d = divmod(a + b + carry, tree.q(j))
        digits.append(d)
    return BoundaryPoint(tuple(digits))


def group_neg(tree: LeveledTree, x: BoundaryPoint) -> BoundaryPoint:
    return from_rank(tree, -rank(tree, x) % quotient_order(tree))


def group_norm(tree: LeveledTree, x: BoundaryPoint):
    """``|x|_G = m_k`` for ``x`` in ``B_k minus B_{k+1}``; 0 for the zero element."""
    s = shell_of(tree, x)
    return Fraction(0) if s == tree.kmax else tree.shell_mass(s)


def dilate(tree: LeveledTree, x: BoundaryPoint, s: int = 1) -> BoundaryPoint:
    """Shift digits ``s`` levels deeper (multiplication by ``p^s`` for constant degree ``p``)."""
    if len(set(tree.q(k) for k in range(tree.kmin, tree.kmax))) != 1:
        raise TreeError("dilation needs a constant degree")
    n = len(x.digits)
    if s >= 0:
        digits = (0,) * min(s, n) + x.digits[: max(n - s, 0)]
    else:
        if any(x.digits[: -s]):
            raise TreeError("dilation would move nonzero digits out of the window")
        digits = x.digits[-s:] + (0,) * (-s)
    return BoundaryPoint(digits)


def character_eval(tree: LeveledTree, j: int, x: BoundaryPoint, level: int | None = None) -> complex:
    """``chi_j(x) = exp(2 pi i j rank(x) / N)`` on ``B_kmin / B_level``."""
    n = quotient_order(tree, level)
    if not 0 <= j < n:
        raise ValueError(f"character index {j} outside [0, {n})")
    r = rank(tree, x, level)
    return complex(np.exp(2j * np.pi * ((j * r) % n) / n))


def character_level(tree: LeveledTree, j: int, level: int | None = None) -> int:
    """Smallest ``s`` with ``chi_j`` trivial on ``B_s``; ``kmin`` for the trivial character."""
    level = tree.kmax if level is None else level
    n = quotient_order(tree, level)
    w = _weights(tree, level) + [n]
    for s in range(tree.kmin, level + 1):
        if (j * w[s - tree.kmin]) % n == 0:
            return s
    raise AssertionError("unreachable: chi_j is trivial on B_level")


def rank_permutation(tree: LeveledTree, level: int) -> np.ndarray:
    """``perm[r]`` is the lexicographic index of the level-``level`` ball of rank ``r``."""
    size = tree.level_size(level)
    perm = np.empty(size, dtype=np.int64)
    for i, u in enumerate(tree.enumerate_level(level)):
        perm[rank(tree, u, level)] = i
    return perm


def fourier_transform(tree: LeveledTree, ball_masses: np.ndarray, level: int) -> np.ndarray:
    """``mu_hat(j) = sum_x mu(x) chi_j(x)`` for every character of ``B_kmin / B_level``.

    ``ball_masses`` is indexed lexicographically like :meth:`LeveledTree.enumerate_level`.
    """
    perm = rank_permutation(tree, level)
    by_rank = np.asarray(ball_masses, dtype=float)[perm]
    return np.fft.ifft(by_rank) * by_rank.size


def group_convolve(tree: LeveledTree, mu: np.ndarray, nu: np.ndarray, level: int) -> np.ndarray:
    """Direct double sum ``(mu * nu)(z) = sum_{x + y = z} mu(x) nu(y)`` on the quotient."""
    perm = rank_permutation(tree, level)
    n = perm.size
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n)
    out = np.array([mu[0] * 0] * n, dtype=object)
    for i in range(n):
        if not mu[i]:
            continue
        for j in range(n):
            if nu[j]:
                out[perm[(inv[i] + inv[j]) % n]] += mu[i] * nu[j]
    return out


# -- Lévy–Khintchine exponents ----------------------------------------------------


def levy_khintchine_exponent(F: LevySequence | LevyMeasureAnisotropic, *, phi: int | None = None,
                             chi: int | None = None, level: int | None = None):
    """``integral (1 - chi) dF`` over the window, or ``integral (1 - phi_k) dF``.

    With ``phi=k`` and a :class:`LevySequence` the integral runs shell by
    shell and is exact in rationals.  With ``chi=j`` the integral runs over
    the balls of level ``level`` (default ``kmax``); mass outside the window
    ball is taken spherically distributed, so it integrates every nontrivial
    character to zero and contributes ``a_kmin`` in full.
    """
    levy = F if isinstance(F, LevySequence) else F.levy
    tree = levy.tree
    if (phi is None) == (chi is None):
        raise ValueError("give exactly one of phi or chi")
    if phi is not None:
        if not isinstance(F, LevySequence):
            raise ValueError("spherical exponents need a LevySequence")
        if not tree.kmin < phi <= tree.kmax:
            raise TreeError(f"level {phi} must lie in ({tree.kmin}, {tree.kmax}]")
        total = levy[tree.kmin]  # phi_k vanishes outside B_kmin
        for s in range(tree.kmin, phi):
            total += levy.shell_mass(s) * (1 - phi_shell_value(tree, phi, s))
        return total
    if chi == 0:
        return 0.0
    return levy_khintchine_all(F, tree.kmax if level is None else level)[chi]


def levy_khintchine_all(F: LevySequence | LevyMeasureAnisotropic, level: int) -> np.ndarray:
    """Exponents for every character of ``B_kmin / B_level`` at once (index 0 is trivial)."""
    levy = F if isinstance(F, LevySequence) else F.levy
    tree = levy.tree
    if isinstance(F, LevySequence):
        masses = LevyMeasureAnisotropic.from_levy(F, level).level_masses(level)
    else:
        masses = F.level_masses(level)
    fhat = fourier_transform(tree, masses, level)
    psi = float(levy[tree.kmin]) + float(sum(masses, 0)) - fhat
    psi[0] = 0.0
    return psi
