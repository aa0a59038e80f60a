"""From probability masks + word boxes to structured table grids.

Row segmentation follows three rules, arbitrated in priority order:
  Rule 1: if ruling lines separate vertically adjacent words in a column
          (0-degree Radon projection test), cut rows at the detected lines.
  Rule 3: unruled table with every column filled on every text line: each
          text line is a row.
  Rule 2: otherwise a new row starts at each text line where the number of
          filled columns is maximal; other lines merge into the open row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import Rect, TableGrid, WordBox, containment_fraction


@dataclass(frozen=True)
class ExtractConfig:
    pixel_threshold: float = 0.99
    min_region_area_frac: float = 0.0005  # of page area
    column_overlap_min: float = 0.5
    radon_peak_frac: float = 0.8
    line_darkness_threshold: int = 128  # binarization level for the line test
    ruled_gap_frac: float = 0.5  # fraction of word gaps that must show a line
    line_overlap_frac: float = 0.5  # y-overlap for text-line grouping

    def __post_init__(self):
        if not 0.5 < self.pixel_threshold < 1.0:
            raise ValueError("pixel_threshold must be in (0.5, 1)")
        for name in ("min_region_area_frac", "column_overlap_min", "radon_peak_frac"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")


def threshold_mask(prob: np.ndarray, threshold: float) -> np.ndarray:
    return (np.asarray(prob) >= threshold).astype(np.uint8)


def extract_regions(binary: np.ndarray, config: ExtractConfig) -> list[Rect]:
    """Bounding boxes of 4-connected foreground components above the area
    floor, sorted top-to-bottom then left-to-right."""
    binary = np.asarray(binary)
    page_area = binary.shape[0] * binary.shape[1]
    min_area = config.min_region_area_frac * page_area
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    labels, n = ndimage.label(binary, structure=structure)
    rects = []
    for sl in ndimage.find_objects(labels):
        if sl is None:
            continue
        ys, xs = sl
        component = labels[sl] > 0
        if component.sum() < min_area:
            continue
        rects.append(Rect(xs.start, ys.start, xs.stop, ys.stop))
    rects.sort(key=lambda r: (r.y0, r.x0))
    return rects


def assign_words(
    words: list[WordBox],
    table_rect: Rect,
    column_rects: list[Rect],
    config: ExtractConfig,
) -> list[list[WordBox]]:
    """Assign table words to columns.

    A word is kept iff at least half of it lies in the table; it joins the
    column covering the largest fraction of it (ties to the leftmost),
    requiring at least `column_overlap_min`. Output lists are sorted (y0, x0).
    """
    columns = sorted(column_rects, key=lambda c: c.x0)
    per_column: list[list[WordBox]] = [[] for _ in columns]
    for word in words:
        if containment_fraction(word.box, table_rect) < 0.5:
            continue
        best_idx, best_frac = None, 0.0
        for i, col in enumerate(columns):
            frac = containment_fraction(word.box, col)
            if frac > best_frac:  # strict: ties stay with the leftmost
                best_idx, best_frac = i, frac
        if best_idx is not None and best_frac >= config.column_overlap_min:
            per_column[best_idx].append(word)
    for col_words in per_column:
        col_words.sort(key=lambda w: (w.box.y0, w.box.x0))
    return per_column


def detect_rule_line(strip: np.ndarray, config: ExtractConfig) -> bool:
    """0-degree Radon projection test for a horizontal ruling line.

    Binarize (dark = ink) and return True iff some row's ink count reaches
    `radon_peak_frac` of the strip width.
    """
    strip = np.asarray(strip)
    if strip.ndim == 3:
        strip = strip.mean(axis=2)
    if strip.size == 0 or strip.shape[1] == 0:
        return False
    ink = strip < config.line_darkness_threshold
    row_sums = ink.sum(axis=1)
    return bool(row_sums.max(initial=0) >= config.radon_peak_frac * strip.shape[1])


def _group_text_lines(
    per_column_words: list[list[WordBox]], config: ExtractConfig
) -> list[list[tuple[int, WordBox]]]:
    """Group all assigned words into text lines by y-interval overlap.

    Two words share a line iff their y-intervals overlap by at least half of
    the shorter interval. Returns lines ordered top-to-bottom; each entry is
    (column index, word).
    """
    tagged = [
        (ci, w) for ci, col in enumerate(per_column_words) for w in col
    ]
    tagged.sort(key=lambda t: (t[1].box.y0, t[1].box.x0))
    lines: list[list[tuple[int, WordBox]]] = []
    spans: list[tuple[int, int]] = []  # running (y0, y1) per line
    for ci, w in tagged:
        placed = False
        for i, (ly0, ly1) in enumerate(spans):
            overlap = min(ly1, w.box.y1) - max(ly0, w.box.y0)
            shorter = min(ly1 - ly0, w.box.height)
            if overlap >= config.line_overlap_frac * shorter:
                lines[i].append((ci, w))
                spans[i] = (min(ly0, w.box.y0), max(ly1, w.box.y1))
                placed = True
                break
        if not placed:
            lines.append([(ci, w)])
            spans.append((w.box.y0, w.box.y1))
    order = np.argsort([s[0] for s in spans], kind="stable")
    return [lines[i] for i in order]


def _line_extent(line: list[tuple[int, WordBox]]) -> tuple[int, int]:
    return min(w.box.y0 for _, w in line), max(w.box.y1 for _, w in line)


def _ruled_fraction(
    per_column_words: list[list[WordBox]],
    table_image: np.ndarray,
    column_rects: list[Rect],
    table_rect: Rect,
    config: ExtractConfig,
) -> float:
    """Max over columns of the fraction of adjacent word gaps with a line."""
    best = 0.0
    for col_rect, col_words in zip(sorted(column_rects, key=lambda c: c.x0), per_column_words):
        pairs = list(zip(col_words, col_words[1:]))
        pairs = [(a, b) for a, b in pairs if b.box.y0 > a.box.y1]
        if not pairs:
            continue
        hits = 0
        for a, b in pairs:
            strip = _crop(table_image, col_rect.x0, a.box.y1, col_rect.x1, b.box.y0, table_rect)
            if detect_rule_line(strip, config):
                hits += 1
        best = max(best, hits / len(pairs))
    return best


def _crop(image: np.ndarray, x0: int, y0: int, x1: int, y1: int, table_rect: Rect) -> np.ndarray:
    h, w = image.shape[:2]
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, w), min(y1, h)
    if x1 <= x0 or y1 <= y0:
        return np.zeros((0, 0), dtype=image.dtype)
    return image[y0:y1, x0:x1]


def segment_rows(
    per_column_words: list[list[WordBox]],
    table_image: np.ndarray,
    table_rect: Rect,
    column_rects: list[Rect],
    config: ExtractConfig,
) -> list[tuple[int, int]]:
    """Split assigned words into row y-spans using the three rules."""
    lines = _group_text_lines(per_column_words, config)
    if not lines:
        return []
    n_columns = len(per_column_words)

    ruled = (
        _ruled_fraction(per_column_words, table_image, column_rects, table_rect, config)
        >= config.ruled_gap_frac
    )
    if ruled:
        groups = _cut_at_lines(lines, table_image, table_rect, config)
    else:
        filled = [len({ci for ci, _ in line}) for line in lines]
        if n_columns > 0 and all(f == n_columns for f in filled):
            # Rule 3: fully filled, one row per text line
            groups = [[line] for line in lines]
        else:
            # Rule 2: rows start at lines with the (global) maximal fill count
            max_fill = max(filled)
            groups = []
            for line, f in zip(lines, filled):
                if f == max_fill or not groups:
                    groups.append([line])
                else:
                    groups[-1].append(line)
    return _spans_from_groups(groups)


def _cut_at_lines(lines, table_image, table_rect, config) -> list[list]:
    """Rule 1: merge consecutive text lines unless a ruling line separates
    them (tested across the full table width)."""
    groups = [[lines[0]]]
    for prev, cur in zip(lines, lines[1:]):
        y_top = _line_extent(prev)[1]
        y_bot = _line_extent(cur)[0]
        strip = _crop(table_image, table_rect.x0, y_top, table_rect.x1, y_bot, table_rect)
        if strip.size and detect_rule_line(strip, config):
            groups.append([cur])
        else:
            groups[-1].append(cur)
    return groups


def _spans_from_groups(groups: list[list]) -> list[tuple[int, int]]:
    """Disjoint row spans: boundaries at midpoints between group extents."""
    extents = []
    for group in groups:
        y0 = min(_line_extent(line)[0] for line in group)
        y1 = max(_line_extent(line)[1] for line in group)
        extents.append((y0, y1))
    spans = []
    for i, (y0, y1) in enumerate(extents):
        start = y0 if i == 0 else max(y0, (extents[i - 1][1] + y0) // 2)
        end = y1 if i == len(extents) - 1 else y1
        spans.append((start, end))
    # clamp any residual overlap from interleaved extents
    for i in range(1, len(spans)):
        if spans[i][0] < spans[i - 1][1]:
            spans[i] = (spans[i - 1][1], max(spans[i][1], spans[i - 1][1] + 1))
    return spans


def build_table_grid(
    table_rect: Rect,
    column_rects: list[Rect],
    row_spans: list[tuple[int, int]],
    per_column_words: list[list[WordBox]],
) -> TableGrid:
    """Fill the cell matrix: cell(r, c) joins column c's words whose
    y-centers fall in row r, in reading order."""
    columns = sorted(column_rects, key=lambda c: c.x0)
    cells = [["" for _ in columns] for _ in row_spans]
    for ci, col_words in enumerate(per_column_words):
        for w in col_words:
            yc = (w.box.y0 + w.box.y1) / 2.0
            for ri, (y0, y1) in enumerate(row_spans):
                last = ri == len(row_spans) - 1
                if y0 <= yc < y1 or (last and yc >= y1):
                    cells[ri][ci] = (cells[ri][ci] + " " + w.text).strip()
                    break
    return TableGrid(region=table_rect, columns=columns, rows=list(row_spans), cells=cells)


def extract_tables(
    table_prob: np.ndarray,
    column_prob: np.ndarray,
    words: list[WordBox],
    page_image: np.ndarray,
    config: ExtractConfig | None = None,
) -> list[TableGrid]:
    """Full extraction: threshold masks, find regions, build one grid per
    detected table."""
    config = config or ExtractConfig()
    table_mask = threshold_mask(table_prob, config.pixel_threshold)
    column_mask = threshold_mask(column_prob, config.pixel_threshold)
    grids = []
    gray = page_image if page_image.ndim == 2 else page_image.mean(axis=2)
    all_columns = extract_regions(column_mask, config)
    for table_rect in extract_regions(table_mask, config):
        columns = []
        for col in all_columns:
            inter = col.intersect(table_rect)
            if inter is not None and containment_fraction(col, table_rect) >= 0.5:
                columns.append(inter)
        if not columns:
            continue
        per_column = assign_words(words, table_rect, columns, config)
        spans = segment_rows(per_column, gray, table_rect, columns, config)
        if not spans:
            continue
        grids.append(build_table_grid(table_rect, columns, spans, per_column))
    return grids


def grid_to_csv(grid: TableGrid) -> str:
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    for row in grid.cells:
        writer.writerow(row)
    return buf.getvalue()
