"""Evaluation: character-level detection scores and adjacency-relation
extraction scores, averaged per document then across documents."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .core import AdjacencyRelation, Direction, Rect, TableGrid, WordBox, intersection_area


@dataclass(frozen=True)
class PRF:
    recall: float
    precision: float

    @property
    def f1(self) -> float:
        if self.precision + self.recall == 0:
            return 0.0
        return 2 * self.precision * self.recall / (self.precision + self.recall)

    def as_dict(self) -> dict:
        return {"recall": self.recall, "precision": self.precision, "f1": self.f1}


@dataclass
class EvalReport:
    per_document: list[PRF] = field(default_factory=list)

    @property
    def macro(self) -> PRF:
        if not self.per_document:
            return PRF(0.0, 0.0)
        n = len(self.per_document)
        return PRF(
            recall=sum(e.recall for e in self.per_document) / n,
            precision=sum(e.precision for e in self.per_document) / n,
        )

    def as_dict(self) -> dict:
        return {
            "per_document": [e.as_dict() for e in self.per_document],
            "macro": self.macro.as_dict(),
        }

    def to_csv(self) -> str:
        lines = ["document,precision,recall,f1"]
        for i, e in enumerate(self.per_document):
            lines.append(f"{i},{e.precision},{e.recall},{e.f1}")
        m = self.macro
        lines.append(f"macro,{m.precision},{m.recall},{m.f1}")
        return "\n".join(lines) + "\n"


def normalize_content(text: str) -> str:
    """Delete whitespace, map non-alphanumerics to '_', uppercase."""
    out = []
    for ch in text:
        if ch.isspace():
            continue
        if ch.isalnum():
            out.append(ch.upper())
        else:
            out.append("_")
    return "".join(out)


def char_boxes_from_words(words: list[WordBox]) -> list[Rect]:
    """Uniform horizontal subdivision of each word box into per-character
    boxes (character-level OCR is not assumed)."""
    boxes = []
    for w in words:
        n = len(w.text)
        b = w.box
        for i in range(n):
            x0 = b.x0 + round(i * b.width / n)
            x1 = b.x0 + round((i + 1) * b.width / n)
            if x1 <= x0:
                x1 = x0 + 1
            boxes.append(Rect(x0, b.y0, x1, b.y1))
    return boxes


def _chars_inside(region: Rect, char_boxes: list[Rect]) -> set[int]:
    """Indices of character boxes whose majority area lies in the region."""
    inside = set()
    for i, c in enumerate(char_boxes):
        if intersection_area(c, region) * 2 >= c.area():
            inside.add(i)
    return inside


def char_level_pr(
    predicted_regions: list[Rect],
    truth_regions: list[Rect],
    char_boxes: list[Rect],
) -> PRF:
    """Character-level completeness/purity scores for one document.

    Regions are matched by maximum shared character count. Recall is averaged
    over truth regions, precision over predicted regions.
    """
    if not truth_regions and not predicted_regions:
        return PRF(1.0, 1.0)
    pred_chars = [_chars_inside(r, char_boxes) for r in predicted_regions]
    truth_chars = [_chars_inside(r, char_boxes) for r in truth_regions]

    recalls = []
    for tc in truth_chars:
        if not tc:
            recalls.append(1.0)
            continue
        best = max(pred_chars, key=lambda pc: len(pc & tc), default=set())
        recalls.append(len(best & tc) / len(tc))
    precisions = []
    for pc in pred_chars:
        if not pc:
            precisions.append(1.0)
            continue
        best = max(truth_chars, key=lambda tc: len(tc & pc), default=set())
        precisions.append(len(best & pc) / len(pc))
    recall = sum(recalls) / len(recalls) if recalls else 1.0
    precision = sum(precisions) / len(precisions) if precisions else 1.0
    return PRF(recall=recall, precision=precision)


def cell_adjacency_relations(grid: TableGrid) -> Counter:
    """Multiset of (cell, nearest non-empty neighbor, direction) relations.

    Empty cells are skipped over entirely: each row is compacted to its
    non-empty cells, horizontal neighbors are consecutive entries of the
    compacted row, and a cell's vertical neighbor is the cell at the same
    compacted position in the nearest row below that has one. Nothing is
    emitted past the table edge.
    """
    relations: Counter = Counter()
    compacted = [
        [normalize_content(c) for c in row if c] for row in grid.cells
    ]
    for row in compacted:
        for a, b in zip(row, row[1:]):
            relations[AdjacencyRelation(a, b, Direction.HORIZONTAL)] += 1
    for r, row in enumerate(compacted):
        for k, text in enumerate(row):
            for below in compacted[r + 1 :]:
                if k < len(below):
                    relations[AdjacencyRelation(text, below[k], Direction.VERTICAL)] += 1
                    break
    return relations


def extraction_pr(
    predicted_grids: list[TableGrid], truth_grids: list[TableGrid]
) -> PRF:
    """Adjacency-relation precision/recall for one document (multisets)."""
    pred: Counter = Counter()
    for g in predicted_grids:
        pred += cell_adjacency_relations(g)
    truth: Counter = Counter()
    for g in truth_grids:
        truth += cell_adjacency_relations(g)
    n_pred = sum(pred.values())
    n_truth = sum(truth.values())
    if n_pred == 0 and n_truth == 0:
        return PRF(1.0, 1.0)
    match = sum((pred & truth).values())
    precision = match / n_pred if n_pred else 1.0
    recall = match / n_truth if n_truth else 1.0
    return PRF(recall=recall, precision=precision)


def evaluate_extraction(
    predicted: list[list[TableGrid]], truth: list[list[TableGrid]]
) -> EvalReport:
    report = EvalReport()
    for p, t in zip(predicted, truth):
        report.per_document.append(extraction_pr(p, t))
    return report


def evaluate_detection(
    predicted_regions: list[list[Rect]],
    truth_regions: list[list[Rect]],
    words: list[list[WordBox]],
) -> EvalReport:
    report = EvalReport()
    for p, t, w in zip(predicted_regions, truth_regions, words):
        report.per_document.append(char_level_pr(p, t, char_boxes_from_words(w)))
    return report
