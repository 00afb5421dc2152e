"""Nearest-neighbour random walks on leveled trees.

Four constructions are supported:

``FT41``
    compact tree; from the root each successor with probability ``1/q_0``,
    elsewhere up with probability ``p`` and to each successor with
    ``(1 - p)/q_k``.
``FT43``
    non-compact tree of constant degree ``p``; up with probability
    ``1/(1 + p^alpha)`` and to each successor with ``p^alpha/(p (1 + p^alpha))``.
``FT46``
    non-compact tree with a Lévy sequence ``a_k``; inside the subtree hanging
    off ``o_k`` (``o_k`` included) the walk moves up with probability
    ``f_k/(1 + f_k)`` where ``f_k = a_k/a_{k+1}``, never steps from ``o_k`` to
    ``o_{k+1}``, and splits the remaining probability uniformly over the
    other successors.
``FT47``
    as ``FT46`` but the downward probabilities follow the ball masses of an
    anisotropic Lévy measure, ``F(u)/F(u') / (1 + f_k)``.

Walks are materialised on the window of their tree.  Below the deepest
materialised level the walk continues homogeneously, which enters the
first-passage recursions only through the fixed point
``min(1, r/(1 - r))`` of the upward hitting probability.  A truncation level
``n`` makes every level-``n`` vertex step up with probability 1.

All probabilities are exact rationals whenever the parameters are.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Iterable, Mapping

import numpy as np

from .exact import solve_sparse
from .spherical import (LevyMeasureAnisotropic, LevySequence, SphericalMeasure,
                        subtree_index)
from .tree import (BoundaryPoint, CoincidentPointsError, LeveledTree, Vertex)

FT41, FT43, FT46, FT47 = "FT41", "FT43", "FT46", "FT47"
KINDS = (FT41, FT43, FT46, FT47)

#: the state "above the window" for walks on non-compact windows
OUTSIDE = "outside"


class WalkError(ValueError):
    """Invalid walk parameters or an unsupported query for this walk."""


class StepCapError(RuntimeError):
    """A simulation hit its step cap before absorption."""

    def __init__(self, msg: str, partial):
        super().__init__(msg)
        self.partial = partial


def _num(x):
    if isinstance(x, bool):
        raise WalkError("booleans are not probabilities")
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    return float(x)


# -- kernels ----------------------------------------------------------------------


@dataclass(frozen=True)
class WalkKernel:
    """Transition law of one of the four walks on a (possibly truncated) window."""

    kind: str
    tree: LeveledTree
    p: object = None
    alpha: object = None
    levy: LevySequence | None = None
    measure: LevyMeasureAnisotropic | None = None
    truncation: int | None = None
    def __post_init__(self):
        tree = self.tree
        if self.kind not in KINDS:
            raise WalkError(f"unknown walk kind {self.kind!r}")
        if self.truncation is not None and not tree.kmin < self.truncation <= self.deepest_level():
            raise WalkError(f"truncation {self.truncation} must lie in ({tree.kmin}, {self.deepest_level()}]")
        if self.kind == FT41:
            if not tree.compact_mode:
                raise WalkError("FT41 walks live on compact trees")
            if not 0 < self.p < Fraction(1, 2):
                raise WalkError(f"FT41 needs 0 < p < 1/2, got {self.p}")
        elif self.kind == FT43:
            if tree.compact_mode:
                raise WalkError("FT43 walks live on non-compact trees")
            if any(tree.q(k) != self.p for k in range(tree.kmin, tree.kmax)):
                raise WalkError(f"FT43 needs constant degree {self.p} on the window")
            if not self.alpha > 0:
                raise WalkError(f"alpha must be positive, got {self.alpha}")
        else:
            if tree.compact_mode:
                raise WalkError(f"{self.kind} walks live on non-compact trees")
            if not self.levy.is_nondegenerate():
                raise WalkError("the Lévy tails a_k must be strictly positive")

    # construction ----------------------------------------------------------------

    @classmethod
    def ft41(cls, tree: LeveledTree, p, truncation: int | None = None) -> "WalkKernel":
        return cls(FT41, tree, p=_num(p), truncation=truncation)

    @classmethod
    def ft43(cls, tree: LeveledTree, alpha, truncation: int | None = None) -> "WalkKernel":
        alpha = int(alpha) if float(alpha).is_integer() else float(alpha)
        return cls(FT43, tree, p=tree.q(tree.kmin), alpha=alpha, truncation=truncation)

    @classmethod
    def ft46(cls, levy: LevySequence, truncation: int | None = None) -> "WalkKernel":
        return cls(FT46, levy.tree, levy=levy, truncation=truncation)

    @classmethod
    def ft47(cls, measure: LevyMeasureAnisotropic, truncation: int | None = None) -> "WalkKernel":
        return cls(FT47, measure.tree, levy=measure.levy, measure=measure, truncation=truncation)

    def truncate(self, n: int) -> "WalkKernel":
        return WalkKernel(self.kind, self.tree, self.p, self.alpha, self.levy, self.measure, n)

    def untruncated(self) -> "WalkKernel":
        return WalkKernel(self.kind, self.tree, self.p, self.alpha, self.levy, self.measure, None)

    # geometry --------------------------------------------------------------------

    def deepest_level(self) -> int:
        """Deepest level where transition probabilities are defined."""
        return self.tree.kmax - 1 if self.kind in (FT46, FT47) else self.tree.kmax

    @property
    def bottom(self) -> int:
        return self.deepest_level() if self.truncation is None else self.truncation

    @property
    def top(self) -> Vertex:
        return self.tree.root()

    def vertices(self, bottom: int | None = None) -> list[Vertex]:
        bottom = self.bottom if bottom is None else bottom
        return list(self.tree.iter_vertices(self.tree.kmin, bottom))

    def children(self, u: Vertex) -> list[Vertex]:
        return self.tree.children(u) if u.level < self.bottom else []

    # probabilities -----------------------------------------------------------------

    def ratio(self, u: Vertex):
        """``f_k`` for the subtree containing ``u`` (FT46 and FT47 only)."""
        k = subtree_index(self.tree, u)
        k = u.level if k is None else k
        return self.levy.ratio(k)

    def up(self, u: Vertex):
        """Probability of the step from ``u`` to its predecessor (possibly outside the window)."""
        if self.truncation is not None and u.level == self.truncation:
            return Fraction(1)
        return self.natural_up(u)

    def natural_up(self, u: Vertex):
        """Upward probability of the untruncated walk."""
        if self.kind == FT41:
            return Fraction(0) if u.level == 0 else self.p
        if self.kind == FT43:
            pa = _power(self.p, self.alpha)
            return 1 / (1 + pa)
        f = self.ratio(u)
        return f / (1 + f)

    def down(self, u: Vertex, c: Vertex):
        """Probability of the step from ``u`` to its successor ``c``."""
        if self.truncation is not None and u.level == self.truncation:
            return Fraction(0)
        tree = self.tree
        q = tree.q(u.level)
        if self.kind == FT41:
            return Fraction(1, q) if u.level == 0 else (1 - self.p) / q
        if self.kind == FT43:
            pa = _power(self.p, self.alpha)
            return pa / (self.p * (1 + pa))
        on_geodesic = subtree_index(tree, u) is None
        f = self.ratio(u)
        if on_geodesic and not any(c.digits[-1:]):
            return Fraction(0) if isinstance(f, Fraction) else 0.0
        if self.kind == FT47:
            fu = self.measure.mass(u)
            if fu:
                return self.measure.mass(c) / fu / (1 + f)
        if on_geodesic:
            return 1 / ((q - 1) * (1 + f))
        return 1 / (q * (1 + f))

    def row(self, u: Vertex) -> list[tuple[object, object]]:
        """Outgoing transitions ``[(target, probability), ...]`` from ``u``."""
        out = []
        r = self.up(u)
        if r:
            out.append((self.tree.parent(u) if u.level > self.tree.kmin else OUTSIDE, r))
        for c in self.children(u):
            d = self.down(u, c)
            if d:
                out.append((c, d))
        return out

    def tail_up_hitting(self, u: Vertex):
        """``F(u, u')`` for ``u`` at the deepest level, from the homogeneous continuation below."""
        r = self.natural_up(u)
        if 2 * r >= 1:
            return Fraction(1) if isinstance(r, Fraction) else 1.0
        return r / (1 - r)

    def tail_down_hitting_top(self):
        """``F(o_{kmin-1}, o_kmin)`` for the walk continued above the window."""
        if self.tree.compact_mode:
            return None
        if self.kind in (FT46, FT47):
            return Fraction(0)
        # FT43 is reversible and vertex-transitive, so F(u', u) / F(u, u')
        # equals the conductance ratio p(u', u) / p(u, u'), giving 1/p.
        return Fraction(1, self.p) if isinstance(self.alpha, int) else 1.0 / self.p

    def is_reversible(self) -> bool:
        return self.kind in (FT41, FT43)

    def check_stochastic(self) -> None:
        """Assert that every materialised row sums to one."""
        for u in self.vertices():
            total = sum(p for _, p in self.row(u))
            if u.level == self.deepest_level() and self.truncation is None:
                total += 1 - self.up(u)  # mass that moves below the materialised window
            if abs(total - 1) > 1e-12:
                raise WalkError(f"row of {u} sums to {total}")


def _power(p: int, alpha):
    if isinstance(alpha, int):
        return Fraction(p) ** alpha
    return float(p) ** alpha


def build_kernel(kind: str, tree: LeveledTree | None = None, truncation: int | None = None,
                 **params) -> WalkKernel:
    """Construct a walk kernel and check the hitting-ratio property of FT46/FT47.

    Parameters by kind: ``FT41`` needs ``p``; ``FT43`` needs ``alpha`` (the
    tree's degree is the base); ``FT46`` needs ``levy``; ``FT47`` needs
    ``measure``.
    """
    if kind == FT41:
        kernel = WalkKernel.ft41(tree, params["p"], truncation)
    elif kind == FT43:
        kernel = WalkKernel.ft43(tree, params["alpha"], truncation)
    elif kind == FT46:
        kernel = WalkKernel.ft46(params["levy"], truncation)
    elif kind == FT47:
        kernel = WalkKernel.ft47(params["measure"], truncation)
    else:
        raise WalkError(f"unknown walk kind {kind!r}")
    if kind in (FT46, FT47) and truncation is None:
        _check_level_ratios(kernel)
    return kernel


def _check_level_ratios(kernel: WalkKernel) -> None:
    # the upward hitting probability inside the subtree off o_k only depends
    # on the level, so one column of the recursion per subtree suffices
    tree = kernel.tree
    for k in range(tree.kmin, kernel.bottom + 1):
        f = kernel.levy.ratio(k)
        r = f / (1 + f)
        x = kernel.tail_up_hitting(tree.origin(k))
        for _ in range(k, kernel.bottom):
            x = r / (1 - (1 - r) * x)
        if x != f:
            raise WalkError(f"hitting probability {x} differs from f_{k} = {f}")


# -- first passage ----------------------------------------------------------------


@dataclass(frozen=True)
class FirstPassageTable:
    """Hitting probabilities, Green function and conductances of a walk.

    ``up[u] = F(u, u')`` and ``down[u] = F(u', u)``; ``green[u] = G(u, u)``.
    With ``killed`` set, level-``killed`` vertices absorb the walk, so
    ``up`` vanishes there and quantities are those of the killed walk.
    ``conductance`` is ``None`` for non-reversible kernels; otherwise
    ``c(root) = 1`` where the root is ``o`` (compact) or ``o_0``.
    """

    kernel: WalkKernel
    up: dict
    down: dict
    green: dict
    conductance: dict | None
    killed: int | None
    root: Vertex

    def hitting(self, u: Vertex, v: Vertex):
        """``F(u, v)``: product of upward then downward one-step hitting probabilities."""
        tree = self.kernel.tree
        w = tree.confluent(u, v)
        val = Fraction(1)
        x = u
        while x.level > w.level:
            val *= self.up[x]
            x = tree.parent(x)
        x = v
        while x.level > w.level:
            val *= self.down[x]
            x = tree.parent(x)
        return val

    def green_between(self, u: Vertex, v: Vertex):
        """``G(u, v) = F(u, v) G(v, v)``."""
        return self.hitting(u, v) * self.green[v]

    def green_to_root(self, u: Vertex):
        return self.green_between(u, self.root)

    def edge_conductance(self, u: Vertex, v: Vertex):
        if self.conductance is None:
            raise WalkError("this kernel is not reversible")
        k = self.kernel
        if v.level == u.level + 1:
            return self.conductance[u] * k.down(u, v)
        return self.conductance[u] * k.up(u)

    def vertices(self) -> list[Vertex]:
        return list(self.green)

    def rows(self) -> Iterable[tuple[Vertex, object, object, object, object]]:
        """``(vertex, F_up, F_down, G_self, G_to_root)`` in level-then-lexicographic order."""
        for u in self.green:
            yield (u, self.up.get(u), self.down.get(u), self.green[u], self.green_to_root(u))


def first_passage(kernel: WalkKernel, killed: int | None = None) -> FirstPassageTable:
    """Solve the level recursions for ``F(u, u')``, ``F(u', u)`` and ``G(u, u)``.

    Upward: ``F(u, u') = p(u, u') / (1 - sum_c p(u, c) F(c, u))`` from the
    deepest level up.  Downward:
    ``F(v, u) = p(v, u) / (1 - p(v, v') F(v', v) - sum_{c != u} p(v, c) F(c, v))``
    from the top down.  Then ``G(u, u) = 1 / (1 - U(u))`` with ``U`` the
    return probability.
    """
    tree = kernel.tree
    bottom = kernel.bottom if killed is None else killed
    if killed is not None and not tree.kmin < killed <= kernel.bottom:
        raise WalkError(f"killing level {killed} must lie in ({tree.kmin}, {kernel.bottom}]")
    levels = [tree.enumerate_level(k) for k in range(tree.kmin, bottom + 1)]
    up: dict = {}
    for verts in reversed(levels):
        for u in verts:
            if killed is not None and u.level == killed:
                up[u] = Fraction(0)
                continue
            r = kernel.up(u)
            if u.level == kernel.bottom and kernel.truncation is None:
                up[u] = kernel.tail_up_hitting(u)
                continue
            back = sum((kernel.down(u, c) * up[c] for c in kernel.children(u)), Fraction(0))
            if back >= 1:
                raise WalkError(f"recurrent behaviour below {u}")
            up[u] = r / (1 - back) if r else Fraction(0)
    down: dict = {}
    top = tree.root()
    top_in = kernel.tail_down_hitting_top()
    if top_in is not None:
        down[top] = top_in
    green: dict = {}
    for verts in levels:
        for v in verts:
            if killed is not None and v.level == killed:
                green[v] = Fraction(1)
                continue
            kids = kernel.children(v)
            if v != top:
                from_above = kernel.up(v) * down[v]
            elif top_in is not None:
                from_above = kernel.up(v) * top_in
            else:
                from_above = Fraction(0)
            contrib = {c: kernel.down(v, c) * up[c] for c in kids}
            total_below = sum(contrib.values(), Fraction(0))
            if v.level == kernel.bottom and kernel.truncation is None:
                total_below = (1 - kernel.up(v)) * kernel.tail_up_hitting(v)
            ret = from_above + total_below
            if ret >= 1:
                raise WalkError(f"the walk is recurrent at {v}")
            green[v] = 1 / (1 - ret)
            for c in kids:
                pc = kernel.down(v, c)
                denom = 1 - from_above - (total_below - contrib[c])
                down[c] = pc / denom if pc else Fraction(0)
    root = tree.root() if tree.compact_mode or not tree.kmin <= 0 <= bottom else tree.origin(0)
    cond = None
    if kernel.is_reversible():
        cond = {top: Fraction(1)}
        for verts in levels[1:]:
            for v in verts:
                u = tree.parent(v)
                cond[v] = cond[u] * kernel.down(u, v) / kernel.up(v)
        scale = cond[root]
        cond = {v: c / scale for v, c in cond.items()}
    return FirstPassageTable(kernel, up, down, green, cond, killed, root)


# -- closed forms and absorbing-chain oracles --------------------------------------


def absorption(rows: Mapping[Hashable, Mapping[Hashable, object]], start: Hashable,
               order: list | None = None) -> dict:
    """Absorption distribution of a finite chain started at ``start``.

    ``rows[s]`` lists the transition probabilities out of each transient
    state ``s``; targets that are not keys of ``rows`` absorb.  The Green
    row ``g`` of ``start`` solves ``(I - Q)^T g = e_start`` exactly.
    """
    transient = list(rows)
    eqs = {s: {s: Fraction(1)} for s in transient}
    for s, row in rows.items():
        for t, p in row.items():
            if t in rows:
                eqs[t][s] = eqs[t].get(s, 0) - p
    sol = solve_sparse(eqs, {start: {"g": Fraction(1)}}, order)
    out: dict = {}
    for s, row in rows.items():
        g = sol[s].get("g", 0)
        if not g:
            continue
        for t, p in row.items():
            if t not in rows:
                out[t] = out.get(t, 0) + g * p
    return out


def _deepest_first(states) -> list:
    return sorted(states, key=lambda s: (-s.level, s.digits))


def boundary_hitting_ft41(kernel: WalkKernel, u: Vertex) -> dict:
    """First-return distribution ``p_n(u, .)`` on ``S_n`` of the truncated FT41 walk.

    With ``q = (1 - p)/p`` and ``k = n - |u ^ v|``,

        p_n(u, v) = sum_{j = max(1, k)}^{n-1} ((q-1)/(q^j - 1) - (q-1)/(q^{j+1} - 1)) m_n / m_{n-j}
                    + (q - 1)/(q^n - 1) m_n.
    """
    if kernel.kind != FT41 or kernel.truncation is None:
        raise WalkError("needs a truncated FT41 kernel")
    tree, n = kernel.tree, kernel.truncation
    if u.level != n:
        raise WalkError(f"{u} is not on the truncation level {n}")
    q = (1 - kernel.p) / kernel.p
    mn = tree.shell_mass(n)

    def step(j):
        return (q - 1) / (q ** j - 1)

    by_k = {}
    for k in range(0, n + 1):
        s = sum((step(j) - step(j + 1)) * mn / tree.shell_mass(n - j) for j in range(max(1, k), n))
        by_k[k] = s + step(n) * mn
    return {v: by_k[n - tree.confluent(u, v).level] for v in tree.enumerate_level(n)}


def ft41_first_return_shells(kernel: WalkKernel) -> SphericalMeasure:
    """Shell masses of ``p_n(o_n, .)`` from the closed form, without enumerating ``S_n``."""
    if kernel.kind != FT41 or kernel.truncation is None:
        raise WalkError("needs a truncated FT41 kernel")
    tree, n = kernel.tree, kernel.truncation
    q = (1 - kernel.p) / kernel.p
    mn = tree.shell_mass(n)

    def step(j):
        return (q - 1) / (q ** j - 1)

    def mass(k):
        s = sum((step(j) - step(j + 1)) * mn / tree.shell_mass(n - j) for j in range(max(1, k), n))
        return s + step(n) * mn

    shells = tuple(mass(n - c) * (tree.shell_mass(c) - tree.shell_mass(c + 1)) / mn for c in range(0, n))
    return SphericalMeasure(tree, n, shells, mass(0))


def first_return_distribution(kernel: WalkKernel, u: Vertex) -> dict:
    """Absorbing-chain solve for the first return to the truncation level from ``u``."""
    if kernel.truncation is None:
        raise WalkError("needs a truncated kernel")
    n = kernel.truncation
    if u.level != n:
        raise WalkError(f"{u} is not on the truncation level {n}")
    tree = kernel.tree
    rows = {v: dict(kernel.row(v)) for v in kernel.vertices(n - 1)}
    return absorption(rows, tree.parent(u), _deepest_first(rows))


def first_return_shells(kernel: WalkKernel, n: int | None = None, tail_tol: float = 1e-20) -> SphericalMeasure:
    """First-return law ``sigma_n`` of a spherically symmetric walk, by shells.

    The walk starts on ``H_n``, is forced to its predecessor and stops at its
    next visit to level ``n``.  Off the geodesic the killed upward hitting
    probability only depends on the level, which reduces the problem to a
    chain on ``o_l``.  On a non-compact tree the chain is continued above
    the window until the probability of climbing further is below
    ``tail_tol``; landing mass in shells above the window goes to ``outer``.
    """
    if kernel.kind not in (FT41, FT43):
        raise WalkError("first-return shells need a spherically symmetric kernel")
    tree = kernel.tree
    n = kernel.bottom if n is None else n
    if kernel.kind == FT41:
        top = 0
        degree = tree.q
        r_of = lambda l: Fraction(0) if l == 0 else kernel.p
        d_of = lambda l: Fraction(1, tree.q(0)) if l == 0 else (1 - kernel.p) / tree.q(l)
    else:
        pa = _power(kernel.p, kernel.alpha)
        ratio = float(1 / pa)
        extra = max(1, math.ceil(math.log(tail_tol) / math.log(ratio)))
        top = tree.kmin - extra
        degree = lambda l: kernel.p
        r_of = lambda l: 1 / (1 + pa)
        d_of = lambda l: pa / (kernel.p * (1 + pa))
    # killed upward hitting probability off the geodesic, level by level
    y = {n: Fraction(0)}
    for lev in range(n - 1, top, -1):
        r = r_of(lev)
        y[lev] = r / (1 - (1 - r) * y[lev + 1])
    rows = {}
    for lev in range(top, n):
        q = degree(lev)
        d = d_of(lev)
        row = {}
        if lev > top:
            row[("o", lev - 1)] = r_of(lev)
        elif r_of(lev):
            row["lost"] = r_of(lev)
        row[("o", lev + 1) if lev + 1 < n else "center"] = d
        back = (q - 1) * d * y[lev + 1]
        if back:
            row[("o", lev)] = back
        row[("shell", lev)] = (q - 1) * d * (1 - y[lev + 1])
        rows[("o", lev)] = row
    # fold self-loops into the diagonal
    for s, row in rows.items():
        if s in row:
            loop = row.pop(s)
            for t in row:
                row[t] = row[t] / (1 - loop)
    order = [("o", lev) for lev in range(n - 1, top - 1, -1)]
    dist = absorption(rows, ("o", n - 1), order)
    zero = Fraction(0) if isinstance(r_of(top), Fraction) else 0.0
    shells = tuple(dist.get(("shell", lev), zero) for lev in range(tree.kmin, n))
    outer = sum((dist.get(("shell", lev), zero) for lev in range(top, tree.kmin)), zero)
    outer += dist.get("lost", zero)
    return SphericalMeasure(tree, n, shells, dist.get("center", zero), outer)


def shells_from_ball_distribution(tree: LeveledTree, n: int, dist: Mapping) -> SphericalMeasure:
    """Aggregate a distribution over level-``n`` vertices (plus ``OUTSIDE``) into shells."""
    zero = Fraction(0)
    shells = [zero] * (n - tree.kmin)
    center = zero
    outer = zero
    for v, w in dist.items():
        if not isinstance(v, Vertex):
            outer += w
            continue
        k = subtree_index(tree, v)
        if k is None:
            center += w
        else:
            shells[k - tree.kmin] += w
    return SphericalMeasure(tree, n, tuple(shells), center, outer)


def limit_distribution_ft46(kernel: WalkKernel, n: int) -> SphericalMeasure:
    """Law of the last level-``n`` vertex visited, from ``o_{n-1}``: shell masses ``(a_{k+1} - a_k)/a_n``."""
    if kernel.kind not in (FT46, FT47):
        raise WalkError("needs an FT46 or FT47 kernel")
    a, tree = kernel.levy, kernel.tree
    if not tree.kmin < n <= kernel.deepest_level():
        raise WalkError(f"level {n} must lie in ({tree.kmin}, {kernel.deepest_level()}]")
    shells = tuple(a.shell_mass(k) / a[n] for k in range(tree.kmin, n))
    return SphericalMeasure(tree, n, shells, a[n] * 0, a[tree.kmin] / a[n])


def limit_distribution_ft47(kernel: WalkKernel, n: int) -> dict:
    """``nu_n(ball u) = F(u)/a_n`` for level-``n`` vertices ``u != o_n``, plus ``OUTSIDE``."""
    if kernel.kind not in (FT46, FT47):
        raise WalkError("needs an FT46 or FT47 kernel")
    tree, a = kernel.tree, kernel.levy
    if not tree.kmin < n <= kernel.deepest_level():
        raise WalkError(f"level {n} must lie in ({tree.kmin}, {kernel.deepest_level()}]")
    measure = kernel.measure or LevyMeasureAnisotropic.from_levy(a, n)
    out = {}
    for u in tree.enumerate_level(n):
        if subtree_index(tree, u) is not None:
            out[u] = measure.mass(u) / a[n]
    out[OUTSIDE] = a[tree.kmin] / a[n]
    return out


def last_exit_distribution(kernel: WalkKernel, n: int, start: str = "below") -> dict:
    """Absorbing-chain solve for where the walk leaves level ``n`` for good.

    States are the window vertices down to level ``n``.  At a level-``n``
    vertex ``w`` the walk steps up with ``r``, or goes down and either
    returns to ``w`` (self-loop, probability ``(1 - r) F``) or escapes into
    the ball below ``w`` for ever (absorbing, ``(1 - r)(1 - F)``), where
    ``F`` is the upward hitting probability of ``w``'s successors.  Leaving
    the window at the top absorbs into ``OUTSIDE``.

    ``start="below"`` starts at ``o_{n-1}``; ``start="truncated"`` starts at
    ``o_n`` with the step to ``o_{n-1}`` forced.
    """
    tree = kernel.tree
    if kernel.truncation is not None:
        raise WalkError("needs an untruncated kernel")
    if not tree.kmin < n <= kernel.deepest_level():
        raise WalkError(f"level {n} must lie in ({tree.kmin}, {kernel.deepest_level()}]")
    if start not in ("below", "truncated"):
        raise WalkError(f"unknown start {start!r}")
    rows = {}
    for u in tree.iter_vertices(tree.kmin, n):
        if u.level < n:
            rows[u] = dict(kernel.row(u))
            continue
        r = kernel.up(u)
        if n < kernel.deepest_level():
            kids = tree.children(u)
            below = {c: kernel.down(u, c) for c in kids}
            back = sum((below[c] * kernel.tail_up_hitting(c) for c in kids), Fraction(0))
        else:
            back = (1 - r) * kernel.tail_up_hitting(u)
        esc = 1 - r - back
        row = {tree.parent(u): r / (1 - back)} if r else {}
        if esc:
            row[("escape", u)] = esc / (1 - back)
        rows[u] = row
    origin_n = tree.origin(n)
    begin = tree.origin(n - 1)
    if start == "truncated":
        rows[origin_n] = {begin: Fraction(1)}
        begin = origin_n
    dist = absorption(rows, begin, _deepest_first(rows))
    return {(k[1] if isinstance(k, tuple) else k): v for k, v in dist.items()}


# -- boundary theory -----------------------------------------------------------------


def martin_kernel(table: FirstPassageTable, u: Vertex, x: BoundaryPoint):
    """``K(u, x) = F(u, u ^ x) / F(o, u ^ x)`` with ``o`` the table's root."""
    tree = table.kernel.tree
    w = tree.confluent(u, x)
    return table.hitting(u, w) / table.hitting(table.root, w)


def martin_kernel_at_top(table: FirstPassageTable, v: Vertex):
    """``K(v, varpi) = F(v, w) / F(o, w)`` with ``w`` the confluent of ``v`` and ``o``."""
    tree = table.kernel.tree
    w = tree.confluent(v, table.root)
    return table.hitting(v, w) / table.hitting(table.root, w)


def harmonic_measure(table: FirstPassageTable, u: Vertex, root: Vertex | None = None):
    """``nu_o(ball u) = F(o, u) (1 - F(u, u')) / (1 - F(u', u) F(u, u'))``."""
    root = table.root if root is None else root
    if u == root and root.level == table.kernel.tree.kmin and table.kernel.tree.compact_mode:
        return Fraction(1)
    if not table.kernel.tree.is_ancestor(root, u):
        raise WalkError(f"{u} does not lie below the root {root}")
    fu, fd = table.up[u], table.down[u]
    return table.hitting(root, u) * (1 - fu) / (1 - fd * fu)


def median(tree: LeveledTree, r: Vertex, x, y) -> Vertex:
    """Vertex where the geodesics from ``r`` to ``x`` and to ``y`` separate."""
    cands = [tree.confluent(x, y), tree.confluent(r, x), tree.confluent(r, y)]
    return max(cands, key=lambda v: v.level)


def naim_kernel(table: FirstPassageTable, x: BoundaryPoint | Vertex, y: BoundaryPoint | Vertex,
                root: Vertex | None = None):
    """``Theta(x, y) = c(o) / (G(o, o) F(o, w) F(w, o))`` with ``w`` the confluent of ``x`` and ``y``.

    Vertices stand for distinct balls at a common resolution.  Coincident
    boundary points raise :class:`~ultradiff.tree.CoincidentPointsError`,
    since the kernel is infinite on the diagonal.
    """
    if x == y:
        raise CoincidentPointsError("the Naim kernel is infinite on the diagonal")
    if table.conductance is None:
        raise WalkError("the Naim kernel needs a reversible walk")
    root = table.root if root is None else root
    w = median(table.kernel.tree, root, x, y)
    return table.conductance[root] / (table.green[root] * table.hitting(root, w) * table.hitting(w, root))


def boundary_generator(table: FirstPassageTable, n: int, exact: bool = True) -> np.ndarray:
    """Matrix of ``f -> integral (f(x) - f(y)) Theta(x, y) d nu(y)`` on level-``n`` balls."""
    tree = table.kernel.tree
    balls = tree.enumerate_level(n)
    nu = [harmonic_measure(table, b) for b in balls]
    size = len(balls)
    mat = np.empty((size, size), dtype=object)
    for i, x in enumerate(balls):
        row_sum = Fraction(0)
        for j, y in enumerate(balls):
            if i == j:
                continue
            val = naim_kernel(table, x, y)
            mat[i, j] = -val * nu[j]
            row_sum += val * nu[j]
        mat[i, i] = row_sum
    return mat if exact else mat.astype(float)


def rescaled_naim(table: FirstPassageTable, x: BoundaryPoint, y: BoundaryPoint, shift: int):
    """``Theta_{o_{-shift}}(x, y) nu_{o_{-shift}}(ball o)^2``, re-rooted at ``o_{-shift}``."""
    tree = table.kernel.tree
    root = tree.origin(-shift)
    nu_o = harmonic_measure(table, tree.origin(0), root)
    return naim_kernel(table, x, y, root) * nu_o ** 2


def kigami_limit(table: FirstPassageTable, x: BoundaryPoint, y: BoundaryPoint):
    """Stabilised value of :func:`rescaled_naim` as the root moves towards ``varpi``.

    Returns ``(value, shift)`` for the first shift at which two successive
    values agree exactly; raises :class:`WalkError` if the window is too
    shallow for that to happen.
    """
    tree = table.kernel.tree
    if tree.compact_mode:
        raise WalkError("the rescaled kernel needs a non-compact tree")
    prev = None
    for shift in range(0, -tree.kmin + 1):
        val = rescaled_naim(table, x, y, shift)
        if prev is not None and val == prev:
            return val, shift - 1
        prev = val
    raise WalkError("window too small: the rescaled kernel did not stabilise")


def kigami_profile(table: FirstPassageTable, v: Vertex):
    """``G(v, v) / (K(v, varpi)^2 c(v))``; the rescaled kernel is a constant multiple of it."""
    if table.conductance is None:
        raise WalkError("needs a reversible walk")
    k = martin_kernel_at_top(table, v)
    return table.green[v] / (k ** 2 * table.conductance[v])


def kigami_j(table: FirstPassageTable, v: Vertex, theta_sq):
    """``j(v) = theta^2 G(v, v) / (K(v, varpi)^2 c(v))``."""
    return theta_sq * kigami_profile(table, v)


def fit_kigami_constant(table: FirstPassageTable, pairs: Iterable[tuple[BoundaryPoint, BoundaryPoint]]):
    """Ratios ``J(x, y) / profile(x ^ y)``; constant when the closed form holds."""
    tree = table.kernel.tree
    out = []
    for x, y in pairs:
        val, _ = kigami_limit(table, x, y)
        out.append(val / kigami_profile(table, tree.confluent(x, y)))
    return out


# -- Dirichlet forms -----------------------------------------------------------------


def harmonic_extension(table: FirstPassageTable, f: Mapping[Vertex, object]) -> dict:
    """Harmonic function on the killed network with boundary values ``f`` on the killing level."""
    if table.killed is None:
        raise WalkError("needs a table of a killed walk")
    kernel = table.kernel
    n = table.killed
    interior = kernel.vertices(n - 1)
    rows, rhs = {}, {}
    for u in interior:
        eq = {u: Fraction(1)}
        b = Fraction(0)
        for v, p in kernel.row(u):
            if v == OUTSIDE:
                raise WalkError("the killed network must be closed above")
            if v.level == n:
                b += p * f[v]
            else:
                eq[v] = eq.get(v, 0) - p
        rows[u] = eq
        rhs[u] = {"h": b}
    sol = solve_sparse(rows, rhs, _deepest_first(interior))
    h = {u: sol[u].get("h", Fraction(0)) for u in interior}
    h.update(f)
    return h


def dirichlet_energy(table: FirstPassageTable, f: Mapping[Vertex, object]):
    """Energy ``sum over edges c(u, v) (h(u) - h(v))^2`` of the harmonic extension of ``f``."""
    if table.conductance is None:
        raise WalkError("needs a reversible walk")
    h = harmonic_extension(table, f)
    tree = table.kernel.tree
    total = Fraction(0)
    for v in h:
        if v.level == tree.kmin:
            continue
        u = tree.parent(v)
        total += table.edge_conductance(u, v) * (h[u] - h[v]) ** 2
    return total


def boundary_energy(table: FirstPassageTable, f: Mapping[Vertex, object]):
    """``1/2 sum_{x != y} (f(x) - f(y))^2 Theta_n(x ^ y) nu_n(x) nu_n(y)`` for the killed walk."""
    if table.killed is None:
        raise WalkError("needs a table of a killed walk")
    tree = table.kernel.tree
    balls = tree.enumerate_level(table.killed)
    root = table.root
    nu = {b: table.hitting(root, b) for b in balls}
    total = Fraction(0)
    for i, x in enumerate(balls):
        for y in balls[i + 1:]:
            d = f[x] - f[y]
            if d:
                total += d * d * naim_kernel(table, x, y) * nu[x] * nu[y]
    return total


# -- simulation ----------------------------------------------------------------------


def stream(seed: int, index: int) -> np.random.Generator:
    """Independent Philox stream number ``index`` for a 64-bit ``seed``."""
    if not 0 <= seed < 2 ** 64:
        raise WalkError("seed must be a 64-bit unsigned integer")
    return np.random.Generator(np.random.Philox(key=seed + (index << 64)))


class _Rows:
    """Cached cumulative transition rows in floating point."""

    def __init__(self, kernel: WalkKernel):
        self.kernel = kernel
        self.cache: dict = {}

    def get(self, u):
        got = self.cache.get(u)
        if got is None:
            row = self.kernel.row(u)
            targets = [t for t, _ in row]
            cum = np.cumsum([float(p) for _, p in row])
            got = (targets, cum)
            self.cache[u] = got
        return got


def simulate(kernel: WalkKernel, start: Vertex, seed: int, steps: int, index: int = 0) -> list:
    """Trajectory of ``steps`` steps from ``start`` (stops early on leaving the window)."""
    rng = stream(seed, index)
    rows = _Rows(kernel)
    path = [start]
    u = start
    draws = rng.random(steps)
    for i in range(steps):
        if isinstance(u, Vertex) and u.level == kernel.deepest_level() and kernel.truncation is None:
            break
        targets, cum = rows.get(u)
        u = targets[min(int(np.searchsorted(cum, draws[i] * cum[-1], side="right")), len(targets) - 1)]
        path.append(u)
        if u == OUTSIDE:
            break
    return path


def sample_boundary(kernel: WalkKernel, table: FirstPassageTable, start: Vertex, n: int,
                    seed: int, trajectories: int, max_steps: int = 10 ** 6,
                    first_index: int = 0) -> list:
    """Level-``n`` ball of the limit point for each trajectory (``OUTSIDE`` when leaving the window).

    At a level-``n`` vertex ``w`` the walk settles in the ball of ``w`` with
    probability ``1 - F(w, w')`` and otherwise continues from ``w'``; this is
    exact because the walk's excursions below ``w`` do not change which
    level-``n`` ball it ends in.  Trajectory ``i`` uses stream ``first_index
    + i``, so splitting a run into index ranges reproduces it exactly.
    """
    if kernel.truncation is not None:
        raise WalkError("needs an untruncated kernel")
    rows = _Rows(kernel)
    tree = kernel.tree
    settle = {u: 1 - float(table.up[u]) for u in tree.enumerate_level(n)}
    out = []
    for t in range(first_index, first_index + trajectories):
        rng = stream(seed, t)
        u = start
        steps = 0
        buf = rng.random(64)
        pos = 0
        while True:
            if pos == len(buf):
                buf = rng.random(64)
                pos = 0
            x = buf[pos]
            pos += 1
            if u.level == n:
                if x < settle[u]:
                    out.append(u)
                    break
                u = tree.parent(u)
            else:
                targets, cum = rows.get(u)
                u = targets[min(int(np.searchsorted(cum, x * cum[-1], side="right")), len(targets) - 1)]
                if u == OUTSIDE:
                    out.append(OUTSIDE)
                    break
            steps += 1
            if steps >= max_steps:
                raise StepCapError(f"trajectory {t} exceeded {max_steps} steps", out)
    return out


def hitting_frequencies(samples: list, tree: LeveledTree, level: int) -> dict:
    """Counts of samples per ball at ``level`` (``OUTSIDE`` counted separately)."""
    counts: dict = {}
    for s in samples:
        key = s if not isinstance(s, Vertex) else Vertex(level, s.digits[: level - tree.kmin])
        counts[key] = counts.get(key, 0) + 1
    return counts
