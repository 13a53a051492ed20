"""Success tables laid out like the deformation-by-method result tables."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import InputError
from .config import COLUMNS


@dataclass
class SuccessTable:
    title: str = ""
    columns: tuple = COLUMNS
    cells: dict = field(default_factory=dict)  # row -> column -> [successes, attempts]

    def add(self, row: str, column: str, success: bool):
        if column not in self.columns:
            raise InputError(f"unknown column {column!r}")
        cell = self.cells.setdefault(row, {}).setdefault(column, [0, 0])
        cell[0] += int(bool(success))
        cell[1] += 1

    def merge_row(self, other: "SuccessTable", row: str, as_row: str | None = None):
        self.cells[as_row or row] = {c: list(v) for c, v in other.cells[row].items()}

    @property
    def rows(self) -> list:
        return list(self.cells)

    def cell(self, row, column) -> tuple:
        s, a = self.cells[row][column]
        return s, a

    def rate(self, row, column) -> float:
        s, a = self.cell(row, column)
        if a == 0:
            raise InputError(f"cell {row}/{column} has no attempts")
        return s / a

    def total(self, row) -> tuple:
        s = sum(v[0] for v in self.cells[row].values())
        a = sum(v[1] for v in self.cells[row].values())
        return s, a

    def validate(self):
        for row, cols in self.cells.items():
            for col, (s, a) in cols.items():
                if a <= 0 or not 0 <= s <= a:
                    raise InputError(f"invalid cell {row}/{col}: {s}/{a}")

    def to_dict(self) -> dict:
        return {"title": self.title, "columns": list(self.columns), "rows": self.rows, "cells": {r: {c: list(v) for c, v in cols.items()} for r, cols in self.cells.items()}}

    @classmethod
    def from_dict(cls, d) -> "SuccessTable":
        rows = d.get("rows", list(d["cells"]))
        return cls(d.get("title", ""), tuple(d["columns"]), {r: {c: list(v) for c, v in d["cells"][r].items()} for r in rows})

    def render(self) -> str:
        """Aligned text: one row per method, cells as successes/attempts."""
        head = ["method", *self.columns, "total"]
        body = []
        for row in self.cells:
            cells = []
            for c in self.columns:
                if c in self.cells[row]:
                    s, a = self.cells[row][c]
                    cells.append(f"{s}/{a}")
                else:
                    cells.append("-")
            s, a = self.total(row)
            body.append([row, *cells, f"{s}/{a}"])
        widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
        fmt = lambda r: "  ".join(x.ljust(w) if i == 0 else x.rjust(w) for i, (x, w) in enumerate(zip(r, widths)))  # noqa: E731
        lines = [self.title] if self.title else []
        lines += [fmt(head), "  ".join("-" * w for w in widths), *map(fmt, body)]
        return "\n".join(lines)
