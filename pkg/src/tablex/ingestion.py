"""Reading images, word boxes, and table/column annotations.

File formats:
  - Annotation JSON: {"image_size": [W, H], "tables": [[x0,y0,x1,y1], ...],
    "columns": [[x0,y0,x1,y1], ...]}
  - Word-box file: UTF-8 TSV, one word per line: text<TAB>x0<TAB>y0<TAB>x1<TAB>y1
  - Manifest: JSON list of {"image": ..., "words": ..., "annotation": ...,
    "split": "train"|"val"|"test"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import cv2
import numpy as np

from .core import (
    COLUMN_CONTAINMENT_MIN,
    DocumentSample,
    Rect,
    WordBox,
    containment_fraction,
)
from .errors import ParseError, ValidationError


class Split(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class ManifestEntry:
    image_path: Path
    words_path: Path
    annotation_path: Path
    split: Split


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]

    def split(self, which: Split) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == which]

    def to_json(self) -> str:
        return json.dumps(
            [
                {
                    "image": str(e.image_path),
                    "words": str(e.words_path),
                    "annotation": str(e.annotation_path),
                    "split": e.split.value,
                }
                for e in self.entries
            ],
            indent=2,
        )

    @classmethod
    def load(cls, path: str | Path, check_files: bool = True) -> "DatasetManifest":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: {e}") from e
        if not isinstance(raw, list):
            raise ParseError(f"{path}: manifest must be a JSON list")
        entries = []
        seen = set()
        for i, item in enumerate(raw):
            try:
                entry = ManifestEntry(
                    image_path=Path(item["image"]),
                    words_path=Path(item["words"]),
                    annotation_path=Path(item["annotation"]),
                    split=Split(item["split"]),
                )
            except (KeyError, ValueError) as e:
                raise ParseError(f"{path}: entry {i}: {e}") from e
            key = (entry.image_path, entry.words_path, entry.annotation_path)
            if key in seen:
                raise ValidationError(f"{path}: duplicate entry {i}: {key}")
            seen.add(key)
            if check_files:
                for p in key:
                    if not Path(p).exists():
                        raise ValidationError(f"{path}: entry {i}: missing file {p}")
            entries.append(entry)
        return cls(entries)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def parse_annotations(path: str | Path) -> tuple[list[Rect], list[Rect]]:
    """Parse an annotation JSON into (tables, columns).

    Every column must be contained (>= 90% of its area) in some table.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno}: {e.msg}") from e
    for key in ("tables", "columns"):
        if key not in raw or not isinstance(raw[key], list):
            raise ParseError(f"{path}: missing or non-list field '{key}'")
    try:
        tables = [Rect.from_list(t) for t in raw["tables"]]
        columns = [Rect.from_list(c) for c in raw["columns"]]
    except (TypeError, ValueError) as e:
        raise ParseError(f"{path}: bad rectangle: {e}") from e
    for col in columns:
        if not any(
            containment_fraction(col, t) >= COLUMN_CONTAINMENT_MIN for t in tables
        ):
            raise ValidationError(
                f"{path}: column {col.to_list()} not contained in any table"
            )
    return tables, columns


def serialize_annotations(
    tables: list[Rect], columns: list[Rect], image_size: tuple[int, int]
) -> str:
    return json.dumps(
        {
            "image_size": list(image_size),
            "tables": [t.to_list() for t in tables],
            "columns": [c.to_list() for c in columns],
        }
    )


def parse_word_boxes(path: str | Path) -> list[WordBox]:
    """Parse the word-box TSV; blank-text rows are dropped."""
    path = Path(path)
    words = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ParseError(f"{path}: line {lineno}: expected 5 fields, got {len(parts)}")
        text = parts[0]
        try:
            x0, y0, x1, y1 = (int(v) for v in parts[1:])
        except ValueError as e:
            raise ParseError(f"{path}: line {lineno}: non-integer coordinate") from e
        if not text.strip():
            continue  # spurious OCR detection
        if min(x0, y0) < 0:
            raise ValidationError(f"{path}: line {lineno}: negative coordinates")
        try:
            box = Rect(x0, y0, x1, y1)
        except ValueError as e:
            raise ValidationError(f"{path}: line {lineno}: {e}") from e
        words.append(WordBox(text=text, box=box))
    return words


def serialize_word_boxes(words: list[WordBox]) -> str:
    lines = [
        f"{w.text}\t{w.box.x0}\t{w.box.y0}\t{w.box.x1}\t{w.box.y1}" for w in words
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def _scale_rect(r: Rect, sx: float, sy: float) -> Rect:
    # round-half-up keeps rasterization deterministic across platforms
    def rnd(v: float) -> int:
        return int(np.floor(v + 0.5))

    x0, y0 = rnd(r.x0 * sx), rnd(r.y0 * sy)
    x1, y1 = rnd(r.x1 * sx), rnd(r.y1 * sy)
    return Rect(x0, y0, max(x1, x0 + 1), max(y1, y0 + 1))


def rasterize_masks(
    sample: DocumentSample, out_h: int, out_w: int
) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize table/column rects into binary HxW masks.

    Rect coordinates are scaled by (out/in) with round-half-up. The column
    mask is intersected with the table mask so it is pixel-wise a subset.
    """
    if out_h <= 0 or out_w <= 0:
        raise ValueError("output size must be positive")
    sy = out_h / sample.height
    sx = out_w / sample.width
    table_mask = np.zeros((out_h, out_w), dtype=np.uint8)
    column_mask = np.zeros((out_h, out_w), dtype=np.uint8)
    for t in sample.tables:
        s = _scale_rect(t, sx, sy)
        table_mask[s.y0 : s.y1, s.x0 : s.x1] = 1
    for c in sample.columns:
        s = _scale_rect(c, sx, sy)
        column_mask[s.y0 : s.y1, s.x0 : s.x1] = 1
    column_mask &= table_mask
    return table_mask, column_mask


def load_image(path: str | Path) -> np.ndarray:
    """Load an image as uint8 RGB (grayscale inputs are expanded)."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise ParseError(f"cannot read image: {path}")
    if img.ndim == 2:
        img = cv2.cvtColor(img, cv2.COLOR_GRAY2RGB)
    elif img.shape[2] == 4:
        img = cv2.cvtColor(img, cv2.COLOR_BGRA2RGB)
    else:
        img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
    return img


def load_sample(entry: ManifestEntry) -> DocumentSample:
    image = load_image(entry.image_path)
    words = parse_word_boxes(entry.words_path)
    tables, columns = parse_annotations(entry.annotation_path)
    return DocumentSample(image=image, words=words, tables=tables, columns=columns)
