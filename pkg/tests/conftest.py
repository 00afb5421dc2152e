from fractions import Fraction

import pytest

from ultradiff.tree import LeveledTree


@pytest.fixture
def binary4():
    return LeveledTree.compact([2, 2, 2, 2])


@pytest.fixture
def mixed232():
    return LeveledTree.compact([2, 3, 2])


@pytest.fixture
def dyadic():
    """The 2-adic tree on levels -3..3."""
    return LeveledTree.noncompact(2, (-3, 3))


def fr(a, b=1):
    return Fraction(a, b)


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
