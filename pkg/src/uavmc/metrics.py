"""Metric tables, empirical CDF/PDF statistics, and deterministic CSV
emission (17 significant digits, schema-versioned header)."""

from __future__ import annotations

import numpy as np

SCHEMA_VERSION = 1


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


class MetricTable:
    """Rectangular named-column table with deterministic CSV output."""

    def __init__(self, columns):
        self.columns = list(columns)
        self.rows: list[tuple] = []

    def add_row(self, values):
        if isinstance(values, dict):
            row = tuple(values[c] for c in self.columns)
        else:
            row = tuple(values)
        if len(row) != len(self.columns):
            raise ValueError("row width does not match the column schema")
        self.rows.append(row)

    def column(self, name) -> np.ndarray:
        idx = self.columns.index(name)
        return np.array([row[idx] for row in self.rows])

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# uavmc-metrics schema={SCHEMA_VERSION}\n")
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(format_value(v) for v in row) + "\n")
        return path


def cdf_pdf(values, grid=None) -> MetricTable:
    """Empirical distribution of a sample.

    With a grid: the empirical CDF evaluated at each grid point.  Without a
    grid the values must be integers (e.g. cluster sizes) and the result is
    a normalized PDF over the integer support.
    """
    values = np.asarray(values)
    if values.size == 0:
        raise ValueError("cdf_pdf needs a nonempty sample")
    if grid is not None:
        grid = np.asarray(grid, dtype=float)
        sorted_vals = np.sort(values.astype(float))
        cdf = np.searchsorted(sorted_vals, grid, side="right") / values.size
        table = MetricTable(["x", "cdf"])
        for x, c in zip(grid, cdf):
            table.add_row((float(x), float(c)))
        return table
    ints = values.astype(int)
    if not np.array_equal(ints, values):
        raise ValueError("PDF mode requires integer-valued samples")
    lo, hi = int(ints.min()), int(ints.max())
    counts = np.bincount(ints - lo, minlength=hi - lo + 1)
    table = MetricTable(["value", "pdf"])
    for offset, count in enumerate(counts):
        table.add_row((lo + offset, count / values.size))
    return table
