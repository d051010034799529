"""Columnar tables with explicit missing masks, CSV I/O, splitting and profiling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"

# share of non-missing cells that must parse as reals for a column to be numeric
NUMERIC_PARSE_RATE = 0.9


class DatasetError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Column:
    """One named column.

    Numeric columns hold float64 values with NaN at missing cells; categorical
    columns hold an object array of strings with "" at missing cells. The
    boolean ``missing`` mask is authoritative either way.
    """

    name: str
    kind: str
    values: np.ndarray
    missing: np.ndarray

    @classmethod
    def numeric(cls, name: str, values, missing=None) -> "Column":
        v = np.asarray(values, dtype=np.float64)
        m = np.isnan(v) if missing is None else np.asarray(missing, dtype=bool) | np.isnan(v)
        v = np.where(m, np.nan, v)
        return cls(name, NUMERIC, _frozen(v), _frozen(m))

    @classmethod
    def categorical(cls, name: str, values, missing=None) -> "Column":
        v = np.array(["" if x is None else str(x) for x in values], dtype=object)
        m = (v == "") if missing is None else (np.asarray(missing, dtype=bool) | (v == ""))
        v = np.where(m, "", v).astype(object)
        return cls(name, CATEGORICAL, _frozen(v), _frozen(m))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def is_numeric(self) -> bool:
        return self.kind == NUMERIC

    def take(self, rows: np.ndarray) -> "Column":
        return Column(self.name, self.kind, _frozen(self.values[rows]), _frozen(self.missing[rows]))

    def observed(self) -> np.ndarray:
        return self.values[~self.missing]


@dataclass(frozen=True)
class Table:
    """Immutable table; one of the columns is the prediction target."""

    columns: tuple[Column, ...]
    target: str

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DatasetError("column names must be unique")
        if self.target not in names:
            raise DatasetError(f"target column {self.target!r} not in table")
        lengths = {len(c) for c in self.columns}
        if len(lengths) > 1:
            raise DatasetError("columns have unequal lengths")

    @property
    def n_rows(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def target_column(self) -> Column:
        return self.column(self.target)

    @property
    def features(self) -> list[Column]:
        return [c for c in self.columns if c.name != self.target]

    @property
    def schema(self) -> tuple[tuple[str, str], ...]:
        return tuple((c.name, c.kind) for c in self.columns)

    def take(self, rows) -> "Table":
        rows = np.asarray(rows, dtype=np.intp)
        return Table(tuple(c.take(rows) for c in self.columns), self.target)

    def with_features(self, features: Sequence[Column]) -> "Table":
        """Replace every non-target column, keeping the target last."""
        return Table(tuple(features) + (self.target_column,), self.target)

    def equals(self, other: "Table") -> bool:
        if self.schema != other.schema or self.target != other.target:
            return False
        for a, b in zip(self.columns, other.columns):
            if not np.array_equal(a.missing, b.missing):
                return False
            if a.is_numeric:
                if not np.array_equal(a.values[~a.missing], b.values[~b.missing]):
                    return False
            elif not np.array_equal(a.values, b.values):
                return False
        return True


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not 0.0 < f < 1.0 for f in fr):
            raise DatasetError(f"split fractions must lie in (0, 1): {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise DatasetError(f"split fractions must sum to 1: {fr}")


@dataclass(frozen=True)
class ColumnProfile:
    name: str
    kind: str
    missing_fraction: float
    skewness: float | None = None
    outlier_fraction: float | None = None
    cardinality: int | None = None


def _parse_float(cell: str) -> float | None:
    try:
        v = float(cell)
    except ValueError:
        return None
    return v


def infer_column(name: str, cells: Sequence[str]) -> Column:
    """Build a column from raw CSV strings using the 90% parse-rate rule."""
    present = [c for c in cells if c != ""]
    parsed = [_parse_float(c) for c in present]
    n_ok = sum(p is not None for p in parsed)
    if not present or n_ok >= NUMERIC_PARSE_RATE * len(present):
        vals = []
        for c in cells:
            p = _parse_float(c) if c != "" else None
            vals.append(np.nan if p is None else p)
        return Column.numeric(name, vals)
    return Column.categorical(name, cells)


def load_csv(path, target: str) -> Table:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path} is empty") from None
        rows = [r for r in reader if r]
    header = [h.strip() for h in header]
    if target not in header:
        raise DatasetError(f"target column {target!r} not found in {path}")
    ti = header.index(target)
    rows = [r + [""] * (len(header) - len(r)) for r in rows]
    rows = [r for r in rows if r[ti].strip() != ""]
    if not rows:
        raise DatasetError(f"{path} has no data rows")
    cols = [infer_column(h, [r[j].strip() for r in rows]) for j, h in enumerate(header)]
    t = Table(tuple(cols), target)
    tc = t.target_column
    if tc.missing.any():
        # target cells that failed numeric parsing
        t = t.take(np.flatnonzero(~tc.missing))
        if t.n_rows == 0:
            raise DatasetError(f"{path} has no rows with a valid target")
    return t


def _format_cell(col: Column, i: int) -> str:
    if col.missing[i]:
        return ""
    v = col.values[i]
    if col.is_numeric:
        return format(float(v), ".17g")
    return str(v)


def write_csv(t: Table, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(t.names)
        for i in range(t.n_rows):
            w.writerow([_format_cell(c, i) for c in t.columns])


def class_labels(t: Table) -> np.ndarray:
    """Target values as strings (numeric targets formatted canonically)."""
    tc = t.target_column
    if tc.is_numeric:
        return np.array([format(float(v), ".17g") for v in tc.values], dtype=object)
    return np.asarray(tc.values, dtype=object)


def split_indices(t: Table, s: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = t.n_rows
    if n < 10:
        raise DatasetError("split needs at least 10 rows")
    n_train = int(round(n * s.train_fraction))
    n_val = int(round(n * s.val_fraction))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DatasetError(f"degenerate split sizes {(n_train, n_val, n_test)}")

    rng = np.random.default_rng(s.seed)
    labels = class_labels(t)
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if counts.min() >= 3:
        # proportional interleave: each class spreads evenly over the ordering
        key = np.empty(n)
        for k in range(len(classes)):
            idx = np.flatnonzero(inverse == k)
            idx = rng.permutation(idx)
            offset = rng.random()
            key[idx] = (np.arange(len(idx)) + offset) / len(idx)
        order = np.lexsort((rng.permutation(n), key))
    else:
        order = rng.permutation(n)
    train = np.sort(order[:n_train])
    val = np.sort(order[n_train:n_train + n_val])
    test = np.sort(order[n_train + n_val:])
    return train, val, test


def split(t: Table, s: SplitSpec) -> tuple[Table, Table, Table]:
    tr, va, te = split_indices(t, s)
    return t.take(tr), t.take(va), t.take(te)


def skewness(x: np.ndarray) -> float:
    """Fisher-Pearson coefficient g1; 0 for constant or near-empty input."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 2:
        return 0.0
    d = x - x.mean()
    m2 = np.mean(d * d)
    scale = max(np.max(np.abs(x)), 1.0)
    if m2 <= (1e-12 * scale) ** 2:
        return 0.0
    g = float(np.mean(d ** 3) / m2 ** 1.5)
    return g if math.isfinite(g) else 0.0


def iqr_outlier_fraction(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        return 0.0
    q1, q3 = np.percentile(x, [25, 75])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    return float(np.mean((x < lo) | (x > hi)))


def profile_column(c: Column) -> ColumnProfile:
    n = len(c)
    mf = float(c.missing.mean()) if n else 0.0
    obs = c.observed()
    if c.is_numeric:
        return ColumnProfile(c.name, c.kind, mf, skewness(obs), iqr_outlier_fraction(obs))
    return ColumnProfile(c.name, c.kind, mf, cardinality=len(set(obs.tolist())))


def profile(t: Table, include_target: bool = False) -> list[ColumnProfile]:
    cols: Iterable[Column] = t.columns if include_target else t.features
    return [profile_column(c) for c in cols]
