"""Per-step diagnostic time series and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRACE_2D_COLUMNS = ("step", "t", "area", "perimeter", "mri", "rel_area_loss", "iterations")
TRACE_3D_COLUMNS = ("step", "t", "volume", "surface_area", "rel_volume_loss", "iterations")

_INT_COLUMNS = {"step", "iterations"}


def _fmt(name: str, value) -> str:
    if name in _INT_COLUMNS:
        return str(int(value))
    return format(float(value), ".17g")


@dataclass
class FlowTrace:
    """Rows of diagnostics, one per recorded step (step 0 is the input).

    ``extra`` holds per-row quantities that are not part of the CSV
    contract, such as the energy dissipation term of each step.
    """

    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    extra: dict[str, list] = field(default_factory=dict)

    def append(self, row: dict, **extra) -> None:
        self.rows.append(tuple(row[c] for c in self.columns))
        for key, val in extra.items():
            self.extra.setdefault(key, []).append(val)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, name: str) -> np.ndarray:
        if name in self.columns:
            k = self.columns.index(name)
            return np.array([r[k] for r in self.rows])
        return np.array(self.extra[name])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(c, v) for c, v in zip(self.columns, r)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def read_csv(cls, path) -> "FlowTrace":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            columns = tuple(next(reader))
            rows = [
                tuple(int(v) if c in _INT_COLUMNS else float(v) for c, v in zip(columns, r))
                for r in reader
            ]
        return cls(columns, rows)
