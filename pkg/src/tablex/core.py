"""Shared domain types and geometric primitives.

Coordinates are half-open integer pixel intervals [x0, x1) x [y0, y1) with the
origin at the top-left corner, which keeps areas and rasterization exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

# A column annotation must be contained in some table box by at least this
# fraction of its area (hand annotations overhang real table borders).
COLUMN_CONTAINMENT_MIN = 0.9


class DataType(Enum):
    ALPHABETIC = "alphabetic"
    NUMERIC = "numeric"
    ALPHANUMERIC = "alphanumeric"
    DATE = "date"
    CURRENCY = "currency"
    OTHER = "other"


class Direction(Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


@dataclass(frozen=True, order=True)
class Rect:
    """Axis-aligned half-open pixel rectangle [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"negative origin: {self}")
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ValueError(f"empty or inverted rect: {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def area(self) -> int:
        return self.width * self.height

    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def intersect(self, other: "Rect") -> Optional["Rect"]:
        x0 = max(self.x0, other.x0)
        y0 = max(self.y0, other.y0)
        x1 = min(self.x1, other.x1)
        y1 = min(self.y1, other.y1)
        if x1 <= x0 or y1 <= y0:
            return None
        return Rect(x0, y0, x1, y1)

    def to_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, xs) -> "Rect":
        x0, y0, x1, y1 = (int(v) for v in xs)
        return cls(x0, y0, x1, y1)


def intersection_area(a: Rect, b: Rect) -> int:
    w = min(a.x1, b.x1) - max(a.x0, b.x0)
    h = min(a.y1, b.y1) - max(a.y0, b.y0)
    if w <= 0 or h <= 0:
        return 0
    return w * h


def rect_iou(a: Rect, b: Rect) -> float:
    inter = intersection_area(a, b)
    union = a.area() + b.area() - inter
    return inter / union


def containment_fraction(inner: Rect, outer: Rect) -> float:
    """Fraction of `inner`'s area that lies inside `outer`."""
    return intersection_area(inner, outer) / inner.area()


@dataclass(frozen=True)
class WordBox:
    """One OCR word: text, page-pixel box, inferred data type."""

    text: str
    box: Rect
    dtype: DataType = DataType.OTHER

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("WordBox text is empty after trimming")

    def with_dtype(self, dtype: DataType) -> "WordBox":
        return WordBox(self.text, self.box, dtype)

    def with_box(self, box: Rect) -> "WordBox":
        return WordBox(self.text, box, self.dtype)


@dataclass
class DocumentSample:
    """A page image plus word boxes and table/column ground truth."""

    image: np.ndarray  # HxW grayscale or HxWx3 RGB, uint8
    words: list[WordBox] = field(default_factory=list)
    tables: list[Rect] = field(default_factory=list)
    columns: list[Rect] = field(default_factory=list)
    table_mask: Optional[np.ndarray] = None
    column_mask: Optional[np.ndarray] = None

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def validate(self) -> None:
        for col in self.columns:
            if not any(
                containment_fraction(col, t) >= COLUMN_CONTAINMENT_MIN
                for t in self.tables
            ):
                raise ValueError(f"column {col} not contained in any table")
        for mask in (self.table_mask, self.column_mask):
            if mask is not None and mask.shape != self.image.shape[:2]:
                raise ValueError("mask shape differs from image shape")


@dataclass
class MaskPair:
    """Per-pixel table and column foreground probabilities in [0, 1]."""

    table_prob: np.ndarray
    column_prob: np.ndarray

    def __post_init__(self):
        if self.table_prob.shape != self.column_prob.shape:
            raise ValueError("table/column probability shapes differ")
        for p in (self.table_prob, self.column_prob):
            if p.min() < 0.0 or p.max() > 1.0:
                raise ValueError("probabilities outside [0, 1]")


@dataclass
class TableGrid:
    """Structured table output: region, ordered columns/rows, cell texts."""

    region: Rect
    columns: list[Rect]
    rows: list[tuple[int, int]]  # (y0, y1) spans, ordered, disjoint
    cells: list[list[str]]  # rows x columns

    def __post_init__(self):
        xs = [c.x0 for c in self.columns]
        if xs != sorted(xs):
            raise ValueError("columns not ordered by x0")
        ys = [r[0] for r in self.rows]
        if ys != sorted(ys):
            raise ValueError("rows not ordered by y")
        for (a0, a1), (b0, b1) in zip(self.rows, self.rows[1:]):
            if b0 < a1:
                raise ValueError("overlapping row spans")
        if len(self.cells) != len(self.rows) or any(
            len(row) != len(self.columns) for row in self.cells
        ):
            raise ValueError("cell matrix dimensions do not match rows x columns")

    def to_dict(self) -> dict:
        return {
            "region": self.region.to_list(),
            "columns": [c.to_list() for c in self.columns],
            "rows": [list(r) for r in self.rows],
            "cells": self.cells,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TableGrid":
        return cls(
            region=Rect.from_list(d["region"]),
            columns=[Rect.from_list(c) for c in d["columns"]],
            rows=[(int(r[0]), int(r[1])) for r in d["rows"]],
            cells=[[str(c) for c in row] for row in d["cells"]],
        )


@dataclass(frozen=True)
class AdjacencyRelation:
    """(cell text, nearest-neighbor text, direction), texts pre-normalized."""

    cell_text: str
    neighbor_text: str
    direction: Direction
