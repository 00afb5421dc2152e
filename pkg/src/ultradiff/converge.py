"""Convolution powers of walk-induced measures and their diffusion limits.

Every experiment works in transform space.  For spherical measures the
transform at ``phi_k`` of an ``N``-fold convolution power is the ``N``-th
power of the transform, and it is compared with ``exp(-t lam_{k-1})``.  For
anisotropic measures the same is done with the characters of the finite
quotient ``B_kmin / B_R``.  Convergence is certified empirically: the sup
error over ``k`` (or over characters) is reported per ``n``.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .randwalk import (FT41, FT43, FT46, FT47, WalkKernel, first_return_shells,
                       ft41_first_return_shells, limit_distribution_ft46,
                       limit_distribution_ft47)
from .spherical import (LevyMeasureAnisotropic, LevySequence, SphericalMeasure,
                        character_level, fourier_transform, levy_khintchine_all,
                        levy_to_eigenvalues, quotient_order, spherical_transform)
from .tree import LeveledTree


class ConvergenceError(ValueError):
    """Invalid experiment parameters."""


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    index: int
    count: int
    value: complex | float
    target: complex | float

    @property
    def error(self) -> float:
        return abs(self.value - self.target)


@dataclass
class ConvergenceReport:
    """Rows ``(n, k or character, power count, scaled power, target)`` of one sweep."""

    theorem: str
    rows: list[ConvergenceRow] = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    runtime: float = 0.0

    def ns(self) -> list[int]:
        return sorted({r.n for r in self.rows})

    def sup_errors(self, indices: Iterable[int] | None = None) -> dict[int, float]:
        keep = None if indices is None else set(indices)
        out: dict[int, float] = {}
        for r in self.rows:
            if keep is None or r.index in keep:
                out[r.n] = max(out.get(r.n, 0.0), r.error)
        return out

    def value(self, n: int, index: int):
        for r in self.rows:
            if r.n == n and r.index == index:
                return r.value
        raise KeyError((n, index))

    def errors_decrease(self, step: int = 2) -> bool:
        """Sup error at ``n + step`` is below the one at ``n`` across the sweep."""
        sup = self.sup_errors()
        return all(sup[n + step] < sup[n] for n in sup if n + step in sup)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["theorem", "n", "k_or_char", "scaled_power", "target", "abs_error"])
        for r in self.rows:
            w.writerow([self.theorem, r.n, r.index, _fmt(r.value), _fmt(r.target), _fmt(r.error)])
        return buf.getvalue()


def _fmt(x) -> str:
    if isinstance(x, complex):
        return f"{x.real:.17g}{x.imag:+.17g}j"
    return f"{float(x):.17g}"


def as_rational(t) -> Fraction:
    """Exact rational for a time parameter; floats are read through their shortest repr."""
    if isinstance(t, (int, Fraction)):
        return Fraction(t)
    if isinstance(t, str):
        return Fraction(t)
    return Fraction(repr(float(t)))


def _power(tau, count: int) -> float:
    return float(tau) ** count


def _check_t(t) -> Fraction:
    t = as_rational(t)
    if t <= 0:
        raise ConvergenceError(f"time must be positive, got {t}")
    return t


# -- FT41 -------------------------------------------------------------------------


def ft41_count(q, n: int) -> Fraction:
    """``k(n) = (q^n - 1)/(q - 1)``."""
    return (q ** n - 1) / (q - 1)


def converge_ft41(p, t=1, n_range: Sequence[int] = range(2, 13), degrees: int | Sequence[int] = 2
                  ) -> ConvergenceReport:
    """``<sigma_n, phi_k>^floor(t k(n))`` against ``exp(-t q^(k-1))`` with ``q = (1 - p)/p``."""
    start = time.perf_counter()
    p = Fraction(p) if not isinstance(p, float) else as_rational(p)
    if not 0 < p < Fraction(1, 2):
        raise ConvergenceError(f"FT41 needs 0 < p < 1/2, got {p}")
    t = _check_t(t)
    q = (1 - p) / p
    rep = ConvergenceReport(FT41)
    first = []
    for n in n_range:
        degs = [degrees] * n if isinstance(degrees, int) else list(degrees)[:n]
        tree = LeveledTree.compact(degs)
        sigma = ft41_first_return_shells(WalkKernel.ft41(tree, p, truncation=n))
        count = math.floor(t * ft41_count(q, n))
        rep.rows.append(ConvergenceRow(n, 0, count, 1.0, 1.0))
        for k in range(1, n + 1):
            tau = spherical_transform(sigma, k)
            target = math.exp(-float(t) * float(q) ** (k - 1))
            rep.rows.append(ConvergenceRow(n, k, count, _power(tau, count), target))
        first.append(rep.value(n, 1))
    limit = math.exp(-float(t))
    rep.flags["k1_increasing"] = all(a < b for a, b in zip(first, first[1:]))
    rep.flags["k1_below_limit"] = all(v < limit for v in first)
    rep.flags["k1_monotone_from_below"] = rep.flags["k1_increasing"] and rep.flags["k1_below_limit"]
    rep.runtime = time.perf_counter() - start
    return rep


# -- FT43 -------------------------------------------------------------------------


def ft43_count(p: int, alpha, n: int, t=1) -> int:
    """``floor(t j(n))`` with ``j(n) = p^((n+1) alpha)/(p^alpha - 1)``."""
    if float(alpha).is_integer():
        a = int(alpha)
        return math.floor(as_rational(t) * Fraction(p) ** ((n + 1) * a) / (p ** a - 1))
    return math.floor(float(t) * p ** ((n + 1) * alpha) / (p ** alpha - 1))


def ft43_transform(p: int, alpha, n: int, k: int) -> float:
    """Closed form ``1 - (p^alpha - 1)/(p^((n+1-k) alpha) - 1)`` for ``k < n``, 0 otherwise."""
    if k >= n:
        return 0.0
    return 1 - (p ** alpha - 1) / (p ** ((n + 1 - k) * alpha) - 1)


def converge_ft43(p: int, alpha, n_range: Sequence[int] = range(1, 7), kmin: int = -6, t=1
                  ) -> ConvergenceReport:
    """First-return laws on ``H_n`` raised to ``floor(t j(n))`` against ``exp(-t p^(k alpha))``."""
    start = time.perf_counter()
    if p < 2 or not alpha > 0:
        raise ConvergenceError("need p >= 2 and alpha > 0")
    t = _check_t(t)
    rep = ConvergenceReport(FT43)
    formula_err = 0.0
    for n in n_range:
        if n <= kmin:
            raise ConvergenceError(f"n = {n} must exceed kmin = {kmin}")
        tree = LeveledTree.noncompact(p, (kmin, n), metric_base=p)
        sigma = first_return_shells(WalkKernel.ft43(tree, alpha), n)
        count = ft43_count(p, alpha, n, t)
        for k in range(kmin + 1, n + 1):
            tau = float(spherical_transform(sigma, k))
            formula_err = max(formula_err, abs(tau - ft43_transform(p, alpha, n, k)))
            target = math.exp(-float(t) * p ** (k * float(alpha)))
            rep.rows.append(ConvergenceRow(n, k, count, tau ** count, target))
    rep.extra["transform_formula_error"] = formula_err
    rep.runtime = time.perf_counter() - start
    return rep


def ft43_density(p: int, alpha, shell: int, t=1.0, rtol: float = 1e-17) -> float:
    """Limit density ``((p-1)/p) sum_k p^k e^(-t p^(k alpha)) phi_k`` on the shell ``B_j minus B_{j+1}``.

    Terms with ``k <= shell`` add ``A_k``, the term ``k = shell + 1`` adds
    ``-A_{shell+1}/(p - 1)``.  The sum towards ``k = -infinity`` stops once
    the geometric tail bound falls below ``rtol`` times the partial sum.
    """
    t = float(t)

    def term(k):
        return (p - 1) / p * float(p) ** k * math.exp(-t * float(p) ** (k * alpha))

    total = -term(shell + 1) / (p - 1)
    k = shell
    acc = 0.0
    while True:
        a = term(k)
        acc += a
        bound = (p - 1) / p * float(p) ** k / (p - 1)  # sum of p^j (p-1)/p over j < k
        if bound < rtol * max(acc, 1e-300):
            break
        k -= 1
    return total + acc


def ft43_ball_mass(p: int, alpha, level: int, t=1.0, rtol: float = 1e-17) -> float:
    """``mu(B_R) = m_R sum_{k <= R} ((p-1)/p) p^k e^(-t p^(k alpha))`` (higher terms integrate to 0)."""
    t = float(t)
    acc = 0.0
    k = level
    while True:
        acc += (p - 1) / p * float(p) ** k * math.exp(-t * float(p) ** (k * alpha))
        if float(p) ** k < rtol * acc:
            break
        k -= 1
    return acc * float(p) ** (-level)


def ft43_limit_measure(p: int, alpha, window: tuple[int, int], t=1.0) -> SphericalMeasure:
    """The limit law as a spherical measure on the window, resolution ``kmax``."""
    kmin, kmax = window
    tree = LeveledTree.noncompact(p, window, metric_base=p)
    shells = []
    for j in range(kmin, kmax):
        w = float(tree.shell_mass(j) - tree.shell_mass(j + 1))
        shells.append(ft43_density(p, alpha, j, t) * w)
    center = ft43_ball_mass(p, alpha, kmax, t)
    outer = max(0.0, 1.0 - ft43_ball_mass(p, alpha, kmin, t))
    return SphericalMeasure(tree, kmax, tuple(shells), center, outer)


# -- stable laws ------------------------------------------------------------------


@dataclass
class StableReport:
    """Least-squares fit of ``-log mu_hat = c |xi|^alpha`` over norm shells."""

    c: float
    residual: float
    shells: list[int]
    norms: list[float]
    exponents: list[float]
    spread: float
    nonpositive: list[int]

    def passed(self, tol: float) -> bool:
        return self.c > 0 and self.residual <= tol and self.spread <= tol and not self.nonpositive


def quotient_transform(mu: SphericalMeasure) -> np.ndarray:
    """``mu_hat(chi_j)`` over ``B_kmin / B_level`` with the outside mass dropped."""
    return fourier_transform(mu.tree, mu.ball_weights(), mu.level)


def check_stable(alpha, p: int, mu: SphericalMeasure, floor: float = 1e-8,
                 ball_masses: np.ndarray | None = None) -> StableReport:
    """Fit ``mu_hat(xi) = exp(-c |xi|^alpha)`` on the characters of the finite quotient.

    Characters trivial on ``B_s`` but not on ``B_{s-1}`` have ``|xi| = p^s``.
    Shells where the transform falls below ``floor`` are left out of the
    fit, and nonpositive values there are listed in the report.
    """
    tree = mu.tree
    if any(tree.q(k) != p for k in range(tree.kmin, tree.kmax)):
        raise ConvergenceError("the stable fit needs constant degree p")
    masses = mu.ball_weights() if ball_masses is None else ball_masses
    fhat = fourier_transform(tree, masses, mu.level)
    groups: dict[int, list[complex]] = {}
    for j in range(1, fhat.size):
        groups.setdefault(character_level(tree, j, mu.level), []).append(fhat[j])
    shells, xs, ys, bad = [], [], [], []
    spread = 0.0
    for s in sorted(groups):
        vals = np.array(groups[s])
        mean = vals.real.mean()
        if mean <= 0:
            bad.append(s)
            continue
        if mean < floor:
            continue
        spread = max(spread, float(np.abs(vals - mean).max() / mean))
        shells.append(s)
        xs.append(float(p) ** (s * float(alpha)))
        ys.append(-math.log(mean))
    if not xs:
        return StableReport(float("nan"), float("inf"), [], [], [], spread, bad)
    x, y = np.array(xs), np.array(ys)
    c = float(x @ y / (x @ x))
    resid = float(np.max(np.abs(y - c * x) / np.abs(y)))
    return StableReport(c, resid, shells, [float(p) ** s for s in shells], ys, spread, bad)


def dilate_ball_masses(tree: LeveledTree, masses: np.ndarray, level: int) -> np.ndarray:
    """Level-``level`` masses of the image of ``mu`` under ``x -> p x`` (a one-digit shift).

    The image of ``B_kmin`` is ``B_{kmin+1}``; balls outside it would need
    the measure beyond the window and are left at zero, which is harmless
    for characters of level at least ``kmin + 2``.
    """
    size = tree.level_size(level)
    sub = size // tree.q(tree.kmin)
    coarse = np.asarray(masses, dtype=float).reshape(-1, tree.q(level - 1)).sum(axis=1)
    out = np.zeros(size)
    out[:sub] = coarse
    return out


# -- FT46 / FT47 ------------------------------------------------------------------


def converge_ft46(a: LevySequence, t=1, n_range: Sequence[int] | None = None) -> ConvergenceReport:
    """``<nu_n, phi_k>^floor(t a_n)`` against ``exp(-t lam_{k-1})``."""
    start = time.perf_counter()
    if not a.is_nondegenerate():
        raise ConvergenceError("the tails a_k must be strictly positive")
    t = _check_t(t)
    tree = a.tree
    n_range = range(tree.kmin + 1, tree.kmax) if n_range is None else n_range
    model = levy_to_eigenvalues(a)
    kernel = WalkKernel.ft46(a)
    rep = ConvergenceReport(FT46)
    formula_err = Fraction(0)
    for n in n_range:
        nu = limit_distribution_ft46(kernel, n)
        count = math.floor(t * as_rational(a[n]))
        for k in range(tree.kmin + 1, n + 1):
            tau = spherical_transform(nu, k)
            lam = model.lam(k - 1)
            formula_err = max(formula_err, abs(tau - (1 - lam / a[n])))
            target = math.exp(-float(t) * float(lam))
            rep.rows.append(ConvergenceRow(n, k, count, _power(tau, count), target))
    rep.extra["transform_formula_error"] = formula_err
    rep.runtime = time.perf_counter() - start
    return rep


def converge_ft47(F: LevyMeasureAnisotropic | LevySequence, t=1, n_range: Sequence[int] | None = None,
                  level: int | None = None) -> ConvergenceReport:
    """``nu_n_hat(chi)^floor(t a_n)`` against ``exp(-t psi(chi))`` over the characters of ``B_kmin / B_level``."""
    start = time.perf_counter()
    if isinstance(F, LevySequence):
        F = LevyMeasureAnisotropic.from_levy(F, F.tree.kmin + 1)
    a, tree = F.levy, F.tree
    if not a.is_nondegenerate():
        raise ConvergenceError("the tails a_k must be strictly positive")
    t = _check_t(t)
    n_range = list(range(tree.kmin + 1, tree.kmax) if n_range is None else n_range)
    level = min(n_range) if level is None else level
    if level > min(n_range):
        raise ConvergenceError("the quotient level must not exceed the smallest n")
    psi = levy_khintchine_all(F, level)
    kernel = WalkKernel.ft47(F)
    rep = ConvergenceReport(FT47)
    pathologies = []
    for n in n_range:
        nu = limit_distribution_ft47(kernel, n)
        fine = np.zeros(tree.level_size(n))
        for u, w in nu.items():
            if not isinstance(u, str):
                fine[tree.index(u)] = float(w)
        coarse = fine.reshape(tree.level_size(level), -1).sum(axis=1)
        nuhat = fourier_transform(tree, coarse, level)
        nuhat[0] = 1.0  # the mass outside the window is carried by the trivial character only
        count = math.floor(t * as_rational(a[n]))
        for j in range(nuhat.size):
            z = complex(nuhat[j])
            if abs(z) > 1 + 1e-12:
                pathologies.append((n, j, abs(z)))
            value = z ** count if j else 1.0 + 0j
            target = complex(np.exp(-float(t) * psi[j]))
            rep.rows.append(ConvergenceRow(n, j, count, value, target))
    rep.extra["modulus_violations"] = pathologies
    rep.extra["character_levels"] = {j: character_level(tree, j, level)
                                     for j in range(quotient_order(tree, level))}
    rep.runtime = time.perf_counter() - start
    return rep
