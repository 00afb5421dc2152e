"""Homogeneous leveled trees, their vertices and ends.

A tree is described by its forward degrees ``q_k`` on a window of levels
``[kmin, kmax]``.  Vertices at level ``k`` are digit strings
``(d_kmin, ..., d_{k-1})`` with ``0 <= d_j < q_j``; the vertex at level
``kmin`` is the empty string.  Ends (boundary points) are digit strings of
length ``kmax - kmin`` with an implicit zero tail outside the window, so the
all-zero string is the distinguished point ``0`` and the all-zero vertices
``o_k`` lie on the geodesic towards it.

All measures and metrics are exact :class:`fractions.Fraction` values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Iterator, Mapping, Sequence

COMPACT = "compact"
NONCOMPACT = "noncompact"

EXPONENT = "exponent"
HAARNORM = "haarnorm"

#: default cap on the number of vertices materialised on one level
MAX_LEVEL_SIZE = 2**16


class TreeError(ValueError):
    """Invalid tree specification or vertex/point data."""


class CoincidentPointsError(TreeError):
    """The confluent of a boundary point with itself is not a vertex."""


class SizeCapError(TreeError):
    """A level enumeration would exceed the configured size cap."""

    def __init__(self, level: int, size: int, cap: int):
        self.level, self.size, self.cap = level, size, cap
        super().__init__(
            f"level {level} has {_pow2(size)} vertices, exceeding the size cap of {_pow2(cap)}"
        )


def _pow2(n: int) -> str:
    if n > 0 and n & (n - 1) == 0:
        return f"{n} = 2^{n.bit_length() - 1}"
    return str(n)


@dataclass(frozen=True)
class Vertex:
    """A vertex given by its level and digit string (``len(digits) == level - kmin``)."""

    level: int
    digits: tuple[int, ...]

    def __repr__(self) -> str:
        return f"Vertex({self.level}, {''.join(map(str, self.digits)) or '-'})"


@dataclass(frozen=True)
class BoundaryPoint:
    """An end of the tree, in canonical zero-tail form on the window."""

    digits: tuple[int, ...]

    def __repr__(self) -> str:
        return f"BoundaryPoint({''.join(map(str, self.digits))})"


@dataclass(frozen=True)
class LeveledTree:
    """Homogeneous tree with forward degree ``degrees[k]`` at level ``k``.

    Parameters
    ----------
    mode : {"compact", "noncompact"}
    degrees : mapping level -> q_k
        Must cover every level in ``[kmin, kmax)``.
    window : (kmin, kmax)
        Materialised levels.  Compact trees have ``kmin == 0``.
    metric_base : Fraction
        Base ``q > 1`` of the exponent ultrametric.
    """

    mode: str
    degrees: Mapping[int, int]
    window: tuple[int, int]
    metric_base: Fraction = Fraction(2)
    size_cap: int = MAX_LEVEL_SIZE
    _masses: dict = field(default=None, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.mode not in (COMPACT, NONCOMPACT):
            raise TreeError(f"mode must be {COMPACT!r} or {NONCOMPACT!r}, got {self.mode!r}")
        kmin, kmax = self.window
        if not kmin < kmax:
            raise TreeError(f"window must satisfy kmin < kmax, got {self.window}")
        if self.mode == COMPACT and kmin != 0:
            raise TreeError("compact trees must start at level 0")
        degrees = {int(k): int(v) for k, v in dict(self.degrees).items()}
        for k in range(kmin, kmax):
            if k not in degrees:
                raise TreeError(f"degree q_{k} is missing")
            if degrees[k] < 2:
                raise TreeError(f"degree q_{k} = {degrees[k]} violates q_k >= 2")
        object.__setattr__(self, "degrees", degrees)
        base = Fraction(self.metric_base)
        if base <= 1:
            raise TreeError(f"metric_base must be > 1, got {base}")
        object.__setattr__(self, "metric_base", base)
        object.__setattr__(self, "_masses", {})

    # -- construction helpers -------------------------------------------------

    @classmethod
    def compact(cls, degrees: Sequence[int], metric_base=2, **kw) -> "LeveledTree":
        """Compact tree with ``degrees[k] = q_k`` for ``k = 0 .. len-1``."""
        return cls(COMPACT, dict(enumerate(degrees)), (0, len(degrees)), Fraction(metric_base), **kw)

    @classmethod
    def noncompact(cls, degrees: Sequence[int] | int, window: tuple[int, int],
                   metric_base=None, **kw) -> "LeveledTree":
        """Non-compact tree on ``window``; ``degrees`` is a constant or a list from ``kmin``."""
        kmin, kmax = window
        if isinstance(degrees, int):
            degs = {k: degrees for k in range(min(kmin, 0), max(kmax, 0) + 1)}
            base = degrees if metric_base is None else metric_base
        else:
            if len(degrees) < kmax - kmin:
                raise TreeError("need one degree per level of the window")
            degs = {kmin + i: q for i, q in enumerate(degrees)}
            base = 2 if metric_base is None else metric_base
        return cls(NONCOMPACT, degs, (kmin, kmax), Fraction(base), **kw)

    @property
    def kmin(self) -> int:
        return self.window[0]

    @property
    def kmax(self) -> int:
        return self.window[1]

    @property
    def compact_mode(self) -> bool:
        return self.mode == COMPACT

    def q(self, k: int) -> int:
        try:
            return self.degrees[k]
        except KeyError:
            raise TreeError(f"level {k} is outside the window {self.window}") from None

    def with_window(self, window: tuple[int, int]) -> "LeveledTree":
        return LeveledTree(self.mode, self.degrees, window, self.metric_base, self.size_cap)

    # -- measure --------------------------------------------------------------

    def shell_mass(self, k: int) -> Fraction:
        """Haar mass ``m_k`` of a level-``k`` ball, normalised by ``m_0 = 1``.

        In non-compact mode levels below the window are allowed whenever the
        degrees there are known; inside the window only the window's degrees
        are needed.
        """
        if k in self._masses:
            return self._masses[k]
        kmin, kmax = self.window
        if not kmin <= k <= kmax:
            raise TreeError(f"level {k} is outside the window {self.window}")
        m = Fraction(1)
        if k >= 0:
            for j in range(0, k):
                m /= self._degree_for_mass(j)
        else:
            for j in range(k, 0):
                m *= self._degree_for_mass(j)
        self._masses[k] = m
        return m

    def _degree_for_mass(self, j: int) -> int:
        # m_k is normalised at level 0, which may lie outside a shifted window
        if j in self.degrees:
            return self.degrees[j]
        raise TreeError(f"degree q_{j} needed to normalise m at level 0 is unknown")

    def ball_mass(self, u: Vertex) -> Fraction:
        return self.shell_mass(u.level)

    def level_size(self, k: int) -> int:
        """Number of vertices at level ``k`` below ``o_kmin``."""
        kmin, kmax = self.window
        if not kmin <= k <= kmax:
            raise TreeError(f"level {k} is outside the window {self.window}")
        return math.prod(self.degrees[j] for j in range(kmin, k))

    def check_size(self, k: int) -> int:
        size = self.level_size(k)
        if size > self.size_cap:
            raise SizeCapError(k, size, self.size_cap)
        return size

    # -- vertices -------------------------------------------------------------

    def vertex(self, digits: Sequence[int], level: int | None = None) -> Vertex:
        digits = tuple(int(d) for d in digits)
        if level is None:
            level = self.kmin + len(digits)
        if level - self.kmin != len(digits):
            raise TreeError(f"level {level} needs {level - self.kmin} digits, got {len(digits)}")
        if not self.kmin <= level <= self.kmax:
            raise TreeError(f"level {level} is outside the window {self.window}")
        for j, d in zip(range(self.kmin, level), digits):
            if not 0 <= d < self.degrees[j]:
                raise TreeError(f"digit {d} at level {j} out of range [0, {self.degrees[j]})")
        return Vertex(level, digits)

    def origin(self, k: int = 0) -> Vertex:
        """The all-zero vertex ``o_k``."""
        return self.vertex((0,) * (k - self.kmin), k)

    def root(self) -> Vertex:
        return self.origin(self.kmin)

    def parent(self, u: Vertex) -> Vertex:
        if u.level == self.kmin:
            raise TreeError("the top vertex of the window has no materialised predecessor")
        return Vertex(u.level - 1, u.digits[:-1])

    def children(self, u: Vertex) -> list[Vertex]:
        if u.level >= self.kmax:
            return []
        return [Vertex(u.level + 1, u.digits + (d,)) for d in range(self.degrees[u.level])]

    def is_ancestor(self, v: Vertex, u: Vertex) -> bool:
        """True when ``v`` lies on the path from ``u`` to the top (``v == u`` included)."""
        return v.level <= u.level and u.digits[: len(v.digits)] == v.digits

    def enumerate_level(self, k: int) -> list[Vertex]:
        """All vertices at level ``k`` in lexicographic digit order."""
        self.check_size(k)
        ranges = [range(self.degrees[j]) for j in range(self.kmin, k)]
        return [Vertex(k, digits) for digits in product(*ranges)]

    def iter_vertices(self, top: int | None = None, bottom: int | None = None) -> Iterator[Vertex]:
        top = self.kmin if top is None else top
        bottom = self.kmax if bottom is None else bottom
        for k in range(top, bottom + 1):
            yield from self.enumerate_level(k)

    def index(self, u: Vertex) -> int:
        """Lexicographic position of ``u`` within its level."""
        idx = 0
        for j, d in zip(range(self.kmin, u.level), u.digits):
            idx = idx * self.degrees[j] + d
        return idx

    def from_index(self, k: int, idx: int) -> Vertex:
        digits = []
        for j in reversed(range(self.kmin, k)):
            idx, d = divmod(idx, self.degrees[j])
            digits.append(d)
        return Vertex(k, tuple(reversed(digits)))

    # -- boundary points ------------------------------------------------------

    def point(self, digits: Sequence[int] | Mapping[int, int] = ()) -> BoundaryPoint:
        """Boundary point from a digit list (starting at ``kmin``) or a level->digit map."""
        n = self.kmax - self.kmin
        if isinstance(digits, Mapping):
            full = [0] * n
            for level, d in digits.items():
                if not self.kmin <= level < self.kmax:
                    if d:
                        raise TreeError(f"nonzero digit at level {level} outside the window")
                    continue
                full[level - self.kmin] = d
        else:
            full = list(digits) + [0] * (n - len(digits))
            if len(full) > n:
                if any(full[n:]):
                    raise TreeError("nonzero digits beyond the window")
                full = full[:n]
        for j, d in zip(range(self.kmin, self.kmax), full):
            if not 0 <= d < self.degrees[j]:
                raise TreeError(f"digit {d} at level {j} out of range [0, {self.degrees[j]})")
        return BoundaryPoint(tuple(int(d) for d in full))

    def zero(self) -> BoundaryPoint:
        return BoundaryPoint((0,) * (self.kmax - self.kmin))

    def ancestor(self, x: BoundaryPoint, k: int) -> Vertex:
        """The level-``k`` vertex on the geodesic to ``x``."""
        return Vertex(k, x.digits[: k - self.kmin])

    def in_ball(self, x: BoundaryPoint, u: Vertex) -> bool:
        return x.digits[: len(u.digits)] == u.digits

    # -- geometry -------------------------------------------------------------

    def confluent(self, x: BoundaryPoint | Vertex, y: BoundaryPoint | Vertex) -> Vertex:
        """Deepest common vertex of the geodesics from the top to ``x`` and ``y``."""
        if isinstance(x, BoundaryPoint) and isinstance(y, BoundaryPoint) and x == y:
            raise CoincidentPointsError("confluent of coincident boundary points is undefined")
        dx, dy = x.digits, y.digits
        n = 0
        for a, b in zip(dx, dy):
            if a != b:
                break
            n += 1
        return Vertex(self.kmin + n, dx[:n])

    def distance(self, u: Vertex, v: Vertex) -> int:
        """Graph distance between two materialised vertices."""
        w = self.confluent(u, v)
        return (u.level - w.level) + (v.level - w.level)

    def horocycle_number(self, u: Vertex) -> int:
        """``hor(u) = d(u, u^o) - d(o, u^o)``; equals the level of ``u``."""
        if self.compact_mode:
            raise TreeError("horocycle numbers are defined for non-compact trees only")
        if not self.kmin <= 0 <= self.kmax:
            raise TreeError("the window must contain level 0 to locate o")
        o = self.origin(0)
        w = self.confluent(u, o)
        return self.distance(u, w) - self.distance(o, w)

    def ultrametric(self, x: BoundaryPoint, y: BoundaryPoint, which: str = EXPONENT) -> Fraction:
        """Distance between two ends: ``q^-level`` or the Haar mass at the confluent."""
        if x == y:
            return Fraction(0)
        k = self.confluent(x, y).level
        if which == EXPONENT:
            return self.metric_base ** (-k)
        if which == HAARNORM:
            return self.shell_mass(k)
        raise TreeError(f"unknown metric {which!r}")
