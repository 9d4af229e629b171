"""Benchmark objectives: synthetic test functions and nearest-neighbour
lookup into tabular HPO results. Every objective is returned negated where
needed so that all solvers maximize."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, IngestionError

SYNTHETIC_BOUND = 15.0


def ackley(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    a, b, c = 20.0, 0.2, 2.0 * math.pi
    return float(-a * np.exp(-b * np.sqrt(np.mean(x * x))) - np.exp(np.mean(np.cos(c * x)))
                 + a + math.e)


def levy(x: np.ndarray) -> float:
    w = 1.0 + (np.asarray(x, dtype=float) - 1.0) / 4.0
    head = np.sin(math.pi * w[0]) ** 2
    mid = np.sum((w[:-1] - 1.0) ** 2 * (1.0 + 10.0 * np.sin(math.pi * w[:-1] + 1.0) ** 2))
    tail = (w[-1] - 1.0) ** 2 * (1.0 + np.sin(2.0 * math.pi * w[-1]) ** 2)
    return float(head + mid + tail)


def rosenbrock(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (x[:-1] - 1.0) ** 2))


def sum_squares(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(np.arange(1, x.size + 1) * x * x))


SYNTHETIC: dict[str, Callable[[np.ndarray], float]] = {
    "ackley": ackley,
    "levy": levy,
    "rosenbrock": rosenbrock,
    "sumsquares": sum_squares,
}


def eval_synthetic(name: str, x) -> float:
    """Negated test function value, so the global minimizer is the maximizer."""
    try:
        f = SYNTHETIC[name.lower().replace("_", "").replace("-", "")]
    except KeyError:
        raise ConfigError(f"unknown synthetic objective {name!r}; choose from {sorted(SYNTHETIC)}") from None
    x = np.asarray(x, dtype=float).ravel()
    if np.any(np.abs(x) > SYNTHETIC_BOUND + 1e-9):
        raise ValueError(f"point outside [-{SYNTHETIC_BOUND:g}, {SYNTHETIC_BOUND:g}]^d")
    return -f(x)


# ---------------------------------------------------------------------------
# tabular


@dataclass(frozen=True)
class HPOTable:
    X: np.ndarray
    y: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    columns: tuple[str, ...]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.y.size


def load_hpo_table(path) -> HPOTable:
    """Parse a delimited file: header row, d input columns then the accuracy.

    Bounds are the per-column min/max; a constant column gets a unit-width box
    so that it can still be normalized.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines:
        raise IngestionError(f"{path}: empty file")
    try:
        dialect = csv.Sniffer().sniff(lines[0], delimiters=",;\t")
        delimiter = dialect.delimiter
    except csv.Error:
        delimiter = ","
    reader = csv.reader(lines, delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    if len(header) < 2:
        raise IngestionError(f"{path}: header needs at least one input and one output column")
    rows = []
    seen: dict[tuple, int] = {}
    for row_no, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise IngestionError(f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}")
        try:
            values = [float(c) for c in row]
        except ValueError:
            raise IngestionError(f"{path}: row {row_no} has a non-numeric cell") from None
        if not all(math.isfinite(v) for v in values):
            raise IngestionError(f"{path}: row {row_no} has a non-finite cell")
        key = tuple(values[:-1])
        if key in seen:
            raise IngestionError(f"{path}: row {row_no} duplicates the inputs of row {seen[key]}")
        seen[key] = row_no
        rows.append(values)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    arr = np.array(rows)
    X, y = arr[:, :-1], arr[:, -1]
    lb, ub = X.min(axis=0), X.max(axis=0)
    ub = np.where(ub > lb, ub, lb + 1.0)
    return HPOTable(X, y, lb, ub, tuple(header))


def eval_tabular(table: HPOTable, x) -> float:
    """Accuracy of the nearest table row in normalized input space (lowest index on ties)."""
    if len(table) == 0:
        raise IngestionError("empty table")
    u = (np.asarray(x, dtype=float).ravel() - table.lb) / (table.ub - table.lb)
    U = (table.X - table.lb) / (table.ub - table.lb)
    d2 = np.sum((U - u) ** 2, axis=1)
    return float(table.y[int(np.argmin(d2))])


@dataclass(frozen=True)
class Objective:
    name: str
    fn: Callable[[np.ndarray], float]
    lb: np.ndarray
    ub: np.ndarray
    y_opt: float | None

    @property
    def dim(self) -> int:
        return self.lb.size


def make_objective(name: str, dim: int | None = None) -> Objective:
    """Synthetic objective by name, or a tabular objective from a file path."""
    key = name.lower().replace("_", "").replace("-", "")
    if key in SYNTHETIC:
        if not dim or dim < 1:
            raise ConfigError("synthetic objectives need --dim >= 1")
        lb = np.full(dim, -SYNTHETIC_BOUND)
        ub = np.full(dim, SYNTHETIC_BOUND)
        return Objective(key, lambda x, k=key: eval_synthetic(k, x), lb, ub, 0.0)
    path = Path(name)
    if not path.exists():
        raise ConfigError(f"{name!r} is neither a known synthetic objective nor an existing file")
    table = load_hpo_table(path)
    if dim is not None and dim != table.dim:
        raise ConfigError(f"--dim {dim} does not match the table's {table.dim} input columns")
    return Objective(path.stem, lambda x, t=table: eval_tabular(t, x), table.lb, table.ub,
                     float(table.y.max()))
