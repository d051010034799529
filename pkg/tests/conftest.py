from __future__ import annotations

import numpy as np
import pytest

from softpipe.bench import load_bundled
from softpipe.dataset import Column, Table


def numeric_table(X, y, names=None) -> Table:
    X = np.asarray(X, dtype=float)
    names = names or [f"x{j}" for j in range(X.shape[1])]
    cols = [Column.numeric(n, X[:, j]) for j, n in enumerate(names)]
    cols.append(Column.categorical("y", [str(v) for v in y]))
    return Table(tuple(cols), "y")


@pytest.fixture(scope="session")
def wine():
    return load_bundled("wine")


@pytest.fixture(scope="session")
def cancer():
    return load_bundled("breast_cancer")


@pytest.fixture(scope="session")
def anes():
    return load_bundled("anes96")


@pytest.fixture
def mixed_table():
    """60 rows: skewed numeric, a column with gaps, a categorical, binary target."""
    rng = np.random.default_rng(3)
    n = 60
    a = rng.lognormal(size=n)
    b = rng.normal(size=n)
    b[::7] = np.nan
    c = rng.choice(["red", "green", "blue"], n)
    c[::11] = ""
    y = np.where(a + (c == "red") > 1.5, "pos", "neg")
    return Table((Column.numeric("a", a), Column.numeric("b", b), Column.categorical("c", c),
                  Column.categorical("y", y)), "y")


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Collects one status line per acceptance criterion for the end-of-run summary."""

    def report(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
