"""Synthetic document pages with exact word boxes and known cell matrices.

Words are rendered with a built-in monospaced block-glyph font (5x7 units per
character, 1-unit gap) so word extents are exact and machine-independent.
Generated pages drive desk-scale training, extraction fixtures, and metric
oracles.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .core import DataType, DocumentSample, Rect, TableGrid, WordBox
from .errors import LayoutError

GLYPH_W = 5
GLYPH_H = 7
INK_VALUE = 60
LINE_VALUE = 0
PAGE_VALUE = 255

LEXICON: dict[DataType, list[str]] = {
    DataType.ALPHABETIC: [
        "TOTAL", "NET", "AMOUNT", "ITEM", "NAME", "RATE", "TAX", "UNIT",
        "GROSS", "DESC", "QTY", "CODE", "PRICE", "SUM",
    ],
    DataType.NUMERIC: ["12", "3.50", "1,200", "42%", "7", "99.99", "804", "0.5"],
    DataType.CURRENCY: ["$12.00", "$5", "$9.50", "$3.20", "$77"],
    DataType.DATE: ["2013-04-17", "01/02/2014", "2020-12-01", "7/8/2019"],
    DataType.ALPHANUMERIC: ["A12B", "X9", "REF7", "B2B4", "Q5T"],
}

_COLUMN_DTYPES = list(LEXICON.keys())


@dataclass(frozen=True)
class SynthSpec:
    page_size: int = 1024
    n_tables: int = 1
    n_columns: int = 3
    n_rows: int = 4
    ruled: bool = False
    multi_line_cell_prob: float = 0.0
    column_dtypes: tuple[DataType, ...] | None = None
    font_size: int = 2  # scale factor for the 5x7 glyph grid
    seed: int = 0

    def __post_init__(self):
        if self.n_tables not in (0, 1, 2):
            raise ValueError("n_tables must be 0, 1, or 2")
        if not 2 <= self.n_columns <= 6:
            raise ValueError("n_columns must be in 2..6")
        if not 2 <= self.n_rows <= 12:
            raise ValueError("n_rows must be in 2..12")
        if not 0.0 <= self.multi_line_cell_prob <= 1.0:
            raise ValueError("multi_line_cell_prob must be in [0, 1]")
        if self.font_size < 1:
            raise ValueError("font_size must be >= 1")


def word_extent(text: str, scale: int) -> tuple[int, int]:
    w = (6 * len(text) - 1) * scale
    h = GLYPH_H * scale
    return w, h


def _draw_word(page: np.ndarray, text: str, x0: int, y0: int, scale: int) -> Rect:
    for i in range(len(text)):
        gx = x0 + i * 6 * scale
        page[y0 : y0 + GLYPH_H * scale, gx : gx + GLYPH_W * scale] = INK_VALUE
    w, h = word_extent(text, scale)
    return Rect(x0, y0, x0 + w, y0 + h)


@dataclass
class _TableLayout:
    rect: Rect
    columns: list[Rect]
    row_spans: list[tuple[int, int]]
    cells: list[list[str]]
    words: list[WordBox] = field(default_factory=list)


def _pick_word(rng: random.Random, dtype: DataType, max_width: int, scale: int) -> str:
    fitting = [t for t in LEXICON[dtype] if word_extent(t, scale)[0] <= max_width]
    if not fitting:
        raise LayoutError(f"no {dtype.value} lexicon entry fits width {max_width}")
    return rng.choice(fitting)


def _layout_table(
    spec: SynthSpec,
    rng: random.Random,
    page: np.ndarray,
    x0: int,
    y0: int,
    width: int,
    max_y: int,
) -> _TableLayout:
    s = spec.font_size
    pad = max(4, 2 * s, (width // spec.n_columns) // 6)
    line_h = GLYPH_H * s
    line_gap = 3 * s
    rule_thickness = 2
    col_w = width // spec.n_columns
    n_cols = spec.n_columns

    dtypes = spec.column_dtypes or tuple(
        rng.choice(_COLUMN_DTYPES) for _ in range(n_cols)
    )
    if len(dtypes) != n_cols:
        raise LayoutError("column_dtypes length must equal n_columns")

    # choose line counts per cell; a row never has every column multi-line so
    # the maximal fill count occurs exactly at row-start lines
    cell_lines = []
    for _ in range(spec.n_rows):
        row = [
            2 if rng.random() < spec.multi_line_cell_prob else 1
            for _ in range(n_cols)
        ]
        if all(n > 1 for n in row):
            row[-1] = 1
        cell_lines.append(row)

    row_spans = []
    cells = []
    words: list[WordBox] = []
    y = y0
    boundaries = [y]
    for r in range(spec.n_rows):
        n_lines = max(cell_lines[r])
        row_y0 = y + pad
        row_y1 = row_y0 + n_lines * line_h + (n_lines - 1) * line_gap
        if row_y1 + pad > max_y:
            raise LayoutError(
                f"{spec.n_rows} rows do not fit in the available height"
            )
        row_cells = []
        for c in range(n_cols):
            col_x0 = x0 + c * col_w
            texts = []
            for li in range(cell_lines[r][c]):
                text = _pick_word(rng, dtypes[c], col_w - 2 * pad, s)
                wx = col_x0 + pad
                wy = row_y0 + li * (line_h + line_gap)
                box = _draw_word(page, text, wx, wy, s)
                words.append(WordBox(text=text, box=box, dtype=dtypes[c]))
                texts.append(text)
            row_cells.append(" ".join(texts))
        cells.append(row_cells)
        row_spans.append((row_y0, row_y1))
        y = row_y1 + pad
        boundaries.append(y)

    table_rect = Rect(x0, y0, x0 + n_cols * col_w, y)
    if spec.ruled:
        for by in boundaries:
            yy = min(by, max_y - rule_thickness)
            page[yy : yy + rule_thickness, x0 : x0 + n_cols * col_w] = LINE_VALUE
    # inset so adjacent column regions stay disconnected in the rasterized mask
    inset = max(2, pad // 2)
    columns = [
        Rect(x0 + c * col_w + inset, y0, x0 + (c + 1) * col_w - inset, y)
        for c in range(n_cols)
    ]
    return _TableLayout(table_rect, columns, row_spans, cells, words)


def generate(spec: SynthSpec) -> tuple[DocumentSample, list[TableGrid]]:
    """Render one page; returns the sample and one truth grid per table."""
    rng = random.Random(spec.seed)
    size = spec.page_size
    page = np.full((size, size), PAGE_VALUE, dtype=np.uint8)
    margin = max(16, size // 32)

    sample = DocumentSample(image=page)
    grids: list[TableGrid] = []
    if spec.n_tables == 0:
        return sample, grids

    slots = []
    if spec.n_tables == 1:
        slots.append((margin, size - margin))
    else:
        mid = size // 2
        slots.append((margin, mid - margin // 2))
        slots.append((mid + margin // 2, size - margin))

    for top, bottom in slots:
        width = size - 2 * margin
        layout = _layout_table(spec, rng, page, margin, top, width, bottom)
        sample.words.extend(layout.words)
        sample.tables.append(layout.rect)
        sample.columns.extend(layout.columns)
        grids.append(
            TableGrid(
                region=layout.rect,
                columns=layout.columns,
                rows=layout.row_spans,
                cells=layout.cells,
            )
        )
    sample.validate()
    return sample, grids
