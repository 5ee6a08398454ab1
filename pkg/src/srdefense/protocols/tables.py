"""Accuracy tables shared by every evaluation protocol."""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, SizeError


def destruction_rate(defended_labels, true_labels):
    """Top-1 fraction of positions where the defended prediction equals the true label."""
    defended = np.asarray(defended_labels)
    true = np.asarray(true_labels)
    if defended.size == 0 or true.size == 0:
        raise SizeError("destruction rate of an empty label list")
    if defended.shape != true.shape:
        raise SizeError(f"{defended.size} predictions but {true.size} labels")
    return float(np.mean(defended == true))


@dataclass
class EvalTable:
    """Rows x columns of top-1 accuracies; ``None`` marks an omitted cell."""

    rows: list
    columns: list
    cells: list  # row-major list of lists
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = [str(r) for r in self.rows]
        self.columns = [str(c) for c in self.columns]
        if len(self.cells) != len(self.rows) or any(len(r) != len(self.columns) for r in self.cells):
            raise SizeError("cell grid does not match row/column labels")
        self.cells = [[None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v) for v in r] for r in self.cells]
        for r in self.cells:
            for v in r:
                if v is not None and not 0.0 <= v <= 1.0:
                    raise ConfigError(f"accuracy {v} outside [0, 1]")

    @classmethod
    def empty(cls, rows, columns, metadata=None):
        return cls(list(rows), list(columns), [[None] * len(columns) for _ in rows], dict(metadata or {}))

    def set(self, row, column, value):
        if value is not None and not 0.0 <= value <= 1.0:
            raise ConfigError(f"accuracy {value} outside [0, 1]")
        self.cells[self.rows.index(str(row))][self.columns.index(str(column))] = None if value is None else float(value)

    def get(self, row, column):
        return self.cells[self.rows.index(str(row))][self.columns.index(str(column))]

    def row(self, row):
        return dict(zip(self.columns, self.cells[self.rows.index(str(row))]))

    def column(self, column):
        j = self.columns.index(str(column))
        return {r: cells[j] for r, cells in zip(self.rows, self.cells)}

    def to_dict(self):
        return {"rows": self.rows, "columns": self.columns, "cells": self.cells, "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d):
        return cls(d["rows"], d["columns"], d["cells"], d.get("metadata", {}))

    def to_csv(self, corner="attack"):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([corner] + self.columns)
        for label, cells in zip(self.rows, self.cells):
            writer.writerow([label] + ["" if v is None else repr(v) for v in cells])
        return buf.getvalue()

    def format(self, digits=1):
        """Fixed-width text rendering in percent."""
        width = max([len(c) for c in self.columns] + [6]) + 2
        lead = max([len(r) for r in self.rows] + [6]) + 2
        lines = ["".ljust(lead) + "".join(c.rjust(width) for c in self.columns)]
        for label, cells in zip(self.rows, self.cells):
            text = ["-" if v is None else f"{100 * v:.{digits}f}" for v in cells]
            lines.append(label.ljust(lead) + "".join(t.rjust(width) for t in text))
        return "\n".join(lines)
