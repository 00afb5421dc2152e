"""Hierarchical Laplacians on homogeneous trees.

A homogeneous hierarchical Laplacian is fixed by one number per level.  In
projection form it is ``L f = sum_k C_k (f - P_k f)`` where ``P_k`` averages
over level-``k`` balls and ``C_k >= 0`` is the choice function.  Summing the
projections by parts gives the spectral form
``L f = sum_k lam_k (P_{k+1} f - P_k f)`` with ``lam_k = sum_{j <= k} C_j``,
and the ball-difference functions

    f_{v,u} = 1_u / m(u) - 1_v / m(v),      u a successor of v,

are eigenfunctions with eigenvalue ``lam_{level(v)}``.

Functions are stored as values on the level-``n`` balls of the window, in
lexicographic order, so a level-``k`` ball is a contiguous block and every
projection is a reshape followed by a mean.  On a non-compact window the top
ball ``B_kmin`` plays the role of the whole space (reflecting truncation).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Mapping

import numpy as np

from .tree import BoundaryPoint, LeveledTree, TreeError, Vertex

#: relative cut-off used when summing heat-kernel series towards small balls
SERIES_RTOL = 1e-15


class SpectralError(ValueError):
    """Invalid spectral data or operator input."""


def _exact(x) -> bool:
    return isinstance(x, (int, Fraction))


def _as_number(x):
    if isinstance(x, bool):
        raise SpectralError("booleans are not spectral values")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, (Fraction, float)):
        return x
    if isinstance(x, Real):
        return float(x)
    raise SpectralError(f"not a real number: {x!r}")


# -- spectral data --------------------------------------------------------------


@dataclass(frozen=True)
class ChoiceFunction:
    """Level-wise weights ``C_k >= 0`` of a homogeneous hierarchical Laplacian."""

    tree: LeveledTree
    values: Mapping[int, Real]

    def __post_init__(self):
        vals = {int(k): _as_number(v) for k, v in dict(self.values).items()}
        for k, v in vals.items():
            if v < 0:
                raise SpectralError(f"choice value C_{k} = {v} is negative")
        object.__setattr__(self, "values", vals)

    def __getitem__(self, k: int):
        return self.values.get(k, Fraction(0))


def eigenvalue_from_choice(choice: ChoiceFunction, k: int):
    """``lam_k = sum of C_j over window levels j <= k``."""
    tree = choice.tree
    if not tree.kmin <= k <= tree.kmax:
        raise TreeError(f"level {k} is outside the window {tree.window}")
    total = Fraction(0)
    for j in range(tree.kmin, k + 1):
        total += choice[j]
    return total


@dataclass(frozen=True)
class SpectralModel:
    """Eigenvalue sequence ``lam_k`` of a homogeneous hierarchical Laplacian.

    ``eigenvalues[k]`` belongs to the eigenfunctions ``f_{v,u}`` with ``v`` at
    level ``k``; levels ``kmin .. kmax - 1`` must be present.  In compact mode
    the constant function carries the additional eigenvalue 0.
    """

    tree: LeveledTree
    eigenvalues: Mapping[int, Real]

    def __post_init__(self):
        vals = {int(k): _as_number(v) for k, v in dict(self.eigenvalues).items()}
        for k in range(self.tree.kmin, self.tree.kmax):
            if k not in vals:
                raise SpectralError(f"eigenvalue lambda_{k} is missing")
            if vals[k] < 0:
                raise SpectralError(f"eigenvalue lambda_{k} = {vals[k]} is negative")
        object.__setattr__(self, "eigenvalues", vals)

    @classmethod
    def from_choice(cls, choice: ChoiceFunction) -> "SpectralModel":
        tree = choice.tree
        lam, acc = {}, Fraction(0)
        for k in range(tree.kmin, tree.kmax):
            acc += choice[k]
            lam[k] = acc
        return cls(tree, lam)

    def lam(self, k: int):
        try:
            return self.eigenvalues[k]
        except KeyError:
            raise SpectralError(f"eigenvalue lambda_{k} is not defined") from None

    def choice(self) -> ChoiceFunction:
        """Choice function with the same eigenvalues (``C_kmin = lam_kmin``)."""
        kmin = self.tree.kmin
        vals = {kmin: self.lam(kmin)}
        for k in range(kmin + 1, self.tree.kmax):
            vals[k] = self.lam(k) - self.lam(k - 1)
        return ChoiceFunction(self.tree, vals)

    def is_exact(self) -> bool:
        return all(_exact(v) for v in self.eigenvalues.values())

    def is_monotone(self, strict: bool = True) -> bool:
        """Validator for the increasing-eigenvalue property of choice-built models."""
        ks = range(self.tree.kmin, self.tree.kmax - 1)
        if strict:
            return all(self.lam(k) < self.lam(k + 1) for k in ks)
        return all(self.lam(k) <= self.lam(k + 1) for k in ks)

    def spectrum(self, n: int) -> list[tuple[object, int]]:
        """Eigenvalues of the level-``n`` truncation with multiplicities."""
        tree = self.tree
        out = [(Fraction(0), 1)]
        for k in range(tree.kmin, n):
            out.append((self.lam(k), (tree.q(k) - 1) * tree.level_size(k)))
        return out


def taibleson_eigenvalues(p: int, alpha: Real, window: tuple[int, int] = (-8, 8),
                          n_dim: int = 1, mode: str = "noncompact") -> SpectralModel:
    """Model with ``q_k = p**n_dim`` and ``lam_k = p**(k * alpha)``.

    The eigenvalues are exact rationals when ``alpha`` is an integer.
    """
    if p < 2:
        raise SpectralError(f"p must be >= 2, got {p}")
    if alpha <= 0:
        raise SpectralError(f"alpha must be positive, got {alpha}")
    q = p ** n_dim
    if mode == "compact":
        tree = LeveledTree.compact([q] * (window[1] - max(window[0], 0)), metric_base=p)
    else:
        tree = LeveledTree.noncompact(q, window, metric_base=p)
    if float(alpha).is_integer():
        a = int(alpha)
        lam = {k: Fraction(p) ** (k * a) for k in range(tree.kmin, tree.kmax)}
    else:
        lam = {k: float(p) ** (k * float(alpha)) for k in range(tree.kmin, tree.kmax)}
    return SpectralModel(tree, lam)


def taibleson_constant(p: int, alpha: Real, n_dim: int = 1) -> float:
    """Normalising constant ``(p^alpha - 1) / (1 - p^(-alpha - n_dim))`` of the integral form."""
    if float(alpha).is_integer():
        a = int(alpha)
        return (Fraction(p) ** a - 1) / (1 - Fraction(p) ** (-a - n_dim))
    return (p ** alpha - 1) / (1 - p ** (-alpha - n_dim))


# -- functions on balls -----------------------------------------------------------


@dataclass(frozen=True)
class LocallyConstantFunction:
    """A function constant on the level-``level`` balls of the window."""

    tree: LeveledTree
    level: int
    values: np.ndarray

    def __post_init__(self):
        tree = self.tree
        if not tree.kmin <= self.level <= tree.kmax:
            raise TreeError(f"resolution {self.level} is outside the window {tree.window}")
        vals = np.asarray(self.values)
        if vals.dtype == object or vals.dtype.kind in "iub":
            vals = np.array([_as_number(v) for v in vals.ravel()], dtype=object)
        else:
            vals = vals.astype(float)
        if vals.shape != (tree.level_size(self.level),):
            raise SpectralError(
                f"expected {tree.level_size(self.level)} values at level {self.level}, got {vals.shape}"
            )
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_mapping(cls, tree: LeveledTree, level: int,
                     coefficients: Mapping[Vertex, Real]) -> "LocallyConstantFunction":
        vals = np.array([Fraction(0)] * tree.check_size(level), dtype=object)
        for u, v in coefficients.items():
            if u.level != level:
                raise SpectralError(f"{u} is not at resolution level {level}")
            vals[tree.index(u)] = _as_number(v)
        return cls(tree, level, vals)

    @classmethod
    def indicator(cls, tree: LeveledTree, u: Vertex, level: int) -> "LocallyConstantFunction":
        return cls(tree, level, _ball_indicator(tree, u, level))

    @classmethod
    def eigenfunction(cls, tree: LeveledTree, v: Vertex, u: Vertex,
                      level: int | None = None) -> "LocallyConstantFunction":
        """The ball difference ``f_{v,u}`` sampled at resolution ``level``."""
        _check_successor(tree, v, u)
        level = u.level if level is None else level
        vals = (_ball_indicator(tree, u, level) / tree.ball_mass(u)
                - _ball_indicator(tree, v, level) / tree.ball_mass(v))
        return cls(tree, level, vals)

    def __call__(self, x: BoundaryPoint):
        return self.values[self.tree.index(self.tree.ancestor(x, self.level))]

    def refine(self, level: int) -> "LocallyConstantFunction":
        if level < self.level:
            raise SpectralError("cannot refine to a coarser level")
        block = self.tree.level_size(level) // self.tree.level_size(self.level)
        return LocallyConstantFunction(self.tree, level, np.repeat(self.values, block))

    def inner(self, other: "LocallyConstantFunction"):
        """``<f, g>`` in ``L^2(m)`` over the window ball."""
        if other.level != self.level:
            raise SpectralError("functions must share a resolution")
        return (self.values * other.values).sum() * self.tree.shell_mass(self.level)

    def is_exact(self) -> bool:
        return self.values.dtype == object


def _check_successor(tree: LeveledTree, v: Vertex, u: Vertex) -> None:
    if u.level != v.level + 1 or u.digits[:-1] != v.digits:
        raise TreeError(f"{u} is not a successor of {v}")


def _ball_indicator(tree: LeveledTree, u: Vertex, level: int) -> np.ndarray:
    if level < u.level:
        raise SpectralError(f"resolution {level} is coarser than {u}")
    size = tree.check_size(level)
    block = size // tree.level_size(u.level)
    start = tree.index(u) * block
    out = np.array([Fraction(0)] * size, dtype=object)
    out[start:start + block] = Fraction(1)
    return out


def eigenfunction_eval(tree: LeveledTree, v: Vertex, u: Vertex, x: BoundaryPoint):
    """Value of ``f_{v,u}`` at the end ``x``."""
    _check_successor(tree, v, u)
    if tree.in_ball(x, u):
        return 1 / tree.ball_mass(u) - 1 / tree.ball_mass(v)
    if tree.in_ball(x, v):
        return -1 / tree.ball_mass(v)
    return Fraction(0)


def project(f: LocallyConstantFunction, k: int) -> np.ndarray:
    """Values of the level-``k`` ball average of ``f`` at ``f``'s resolution."""
    tree, n = f.tree, f.level
    if k >= n:
        return f.values.copy()
    nk = tree.level_size(k)
    block = f.values.size // nk
    means = f.values.reshape(nk, block).sum(axis=1) / block
    return np.repeat(means, block)


def apply_laplacian(model: SpectralModel, f: LocallyConstantFunction,
                    form: str = "projection") -> LocallyConstantFunction:
    """Apply the hierarchical Laplacian to ``f``.

    ``form="projection"`` sums ``C_k (f - P_k f)``; ``form="spectral"`` sums
    ``lam_k (P_{k+1} f - P_k f)``.  Both are exact on rational input.
    """
    tree, n = f.tree, f.level
    if tree.window != model.tree.window:
        raise SpectralError("function and model live on different windows")
    kmin = tree.kmin
    if form == "projection":
        choice = model.choice()
        out = f.values * 0
        for k in range(kmin, n):
            ck = choice[k]
            if ck:
                out = out + ck * (f.values - project(f, k))
    elif form == "spectral":
        out = f.values * 0
        proj = [project(f, k) for k in range(kmin, n + 1)]
        for k in range(kmin, n):
            out = out + model.lam(k) * (proj[k + 1 - kmin] - proj[k - kmin])
    else:
        raise SpectralError(f"unknown form {form!r}")
    return LocallyConstantFunction(tree, n, out)


# -- finite-dimensional oracle ----------------------------------------------------


def confluent_levels(tree: LeveledTree, n: int) -> np.ndarray:
    """Matrix of confluent levels between level-``n`` balls (``n`` on the diagonal)."""
    size = tree.check_size(n)
    idx = np.arange(size)
    conf = np.full((size, size), tree.kmin, dtype=np.int64)
    for k in range(tree.kmin + 1, n + 1):
        block = size // tree.level_size(k)
        b = idx // block
        conf += b[:, None] == b[None, :]
    return conf


def truncated_generator(model: SpectralModel, n: int, exact: bool = False) -> np.ndarray:
    """Matrix of the Laplacian acting on functions constant on level-``n`` balls.

    ``L = sum_k lam_k (P_{k+1} - P_k)`` with ``P_k`` the block-averaging
    matrix.  The entry between two balls depends only on their confluent
    level, which keeps construction at one pass over the matrix.
    """
    tree = model.tree
    kmin = tree.kmin
    if not kmin <= n <= tree.kmax:
        raise TreeError(f"resolution {n} is outside the window {tree.window}")
    conf = confluent_levels(tree, n)
    mn = tree.shell_mass(n)
    # entry(c) = sum_k lam_k ([c >= k+1] m_n/m_{k+1} - [c >= k] m_n/m_k)
    table = {}
    for c in range(kmin, n + 1):
        acc = Fraction(0)
        for k in range(kmin, n):
            if c >= k + 1:
                acc += model.lam(k) * mn / tree.shell_mass(k + 1)
            if c >= k:
                acc -= model.lam(k) * mn / tree.shell_mass(k)
        table[c] = acc
    if exact:
        lut = np.empty(n - kmin + 1, dtype=object)
        lut[:] = [table[c] for c in range(kmin, n + 1)]
    else:
        lut = np.array([float(table[c]) for c in range(kmin, n + 1)])
    return lut[conf - kmin]


# -- heat kernels -----------------------------------------------------------------


@dataclass(frozen=True)
class HeatProfile:
    """Heat density ``f_t`` on the shells ``B_k minus B_{k+1}`` for ``kmin <= k < n``.

    ``center`` is the mean density on ``B_n``; ``mass`` is the integral of
    the profile and ``tail_bound`` bounds the terms dropped when summing
    towards smaller balls.
    """

    t: float
    level: int
    shells: np.ndarray
    center: float
    mass: float
    tail_bound: float

    def shell_weights(self, tree: LeveledTree) -> np.ndarray:
        k = np.arange(tree.kmin, self.level)
        w = np.array([float(tree.shell_mass(j) - tree.shell_mass(j + 1)) for j in k])
        return self.shells * w


def _check_t(t) -> float:
    t = float(t)
    if not t > 0:
        raise SpectralError(f"time must be positive, got {t}")
    return t


def heat_density(model: SpectralModel, t: Real, k: int) -> float:
    """Heat density ``f_t(x)`` for ``x`` in the shell ``B_k minus B_{k+1}``.

    The series ``1/m_kmin + sum_{j <= k} e^{-t lam_{j-1}} (1/m_j - 1/m_{j-1})
    - e^{-t lam_k} / m_k`` is exact on the window.  For ``k = kmax`` the
    value is the mean density on the smallest ball ``B_kmax``; that sum is
    cut once a term drops below ``SERIES_RTOL`` times the running sum.
    """
    t = _check_t(t)
    tree = model.tree
    if not tree.kmin <= k <= tree.kmax:
        raise TreeError(f"shell {k} is outside the window {tree.window}")
    m = tree.shell_mass
    total = 1 / float(m(tree.kmin))
    for j in range(tree.kmin + 1, k + 1):
        term = math.exp(-t * float(model.lam(j - 1))) * float(1 / m(j) - 1 / m(j - 1))
        total += term
        if k == tree.kmax and abs(term) < SERIES_RTOL * total:
            break
    if k < tree.kmax:
        total -= math.exp(-t * float(model.lam(k))) / float(m(k))
    return total


def heat_profile(model: SpectralModel, t: Real, n: int | None = None) -> HeatProfile:
    """Shell densities of the heat kernel at resolution ``n``."""
    t = _check_t(t)
    tree = model.tree
    n = tree.kmax if n is None else n
    m = [float(tree.shell_mass(k)) for k in range(tree.kmin, n + 1)]
    kmin = tree.kmin
    # partial sums of the positive series, one per shell
    decay = [math.exp(-t * float(model.lam(k))) for k in range(kmin, n)]
    shells = np.empty(n - kmin)
    acc = 1 / m[0]
    tail = 0.0
    for i, k in enumerate(range(kmin, n)):
        if i > 0:
            acc += decay[i - 1] * (1 / m[i] - 1 / m[i - 1])
        shells[i] = acc - decay[i] / m[i]
    center = acc + (decay[-1] * (1 / m[-1] - 1 / m[-2]) if n > kmin else 0.0)
    if n < tree.kmax:
        # the center average is exact; the bound records the next neglected scale
        tail = math.exp(-t * float(model.lam(n))) / m[-1]
    w = np.array([m[i] - m[i + 1] for i in range(n - kmin)])
    mass = float((shells * w).sum() + center * m[-1])
    return HeatProfile(t, n, shells, center, mass, tail)


def heat_kernel_matrix(model: SpectralModel, t: Real, n: int) -> np.ndarray:
    """Transition matrix between level-``n`` balls from the spectral series."""
    prof = heat_profile(model, t, n)
    tree = model.tree
    lut = np.append(prof.shells, prof.center) * float(tree.shell_mass(n))
    return lut[confluent_levels(tree, n) - tree.kmin]


# -- the integral form of the Taibleson operator ----------------------------------


def taibleson_integral(p: int, alpha: Real, f: LocallyConstantFunction) -> np.ndarray:
    """Evaluate ``C * integral (f(x) - f(y)) |x - y|^(-1-alpha) dy`` on each ball of ``f``.

    ``f`` lives on a non-compact window with constant degree ``p`` and
    vanishes outside the window ball.  Pairs of balls contribute through
    their confluent level; the region outside the window ball is summed in
    closed form, so the only approximation is floating point.
    """
    tree, n = f.tree, f.level
    if any(tree.q(k) != p for k in range(tree.kmin, tree.kmax)):
        raise SpectralError("the integral form needs constant degree p on the window")
    a = float(alpha)
    const = float(taibleson_constant(p, alpha))
    vals = np.asarray(f.values, dtype=float)
    conf = confluent_levels(tree, n)
    kern = float(tree.shell_mass(n)) * np.power(float(p), conf * (1 + a))
    np.fill_diagonal(kern, 0.0)
    inside = vals * kern.sum(axis=1) - kern @ vals
    outside_weight = (1 - 1 / p) * p ** (tree.kmin * a) / (p ** a - 1)
    return const * (inside + outside_weight * vals)
