"""Table detection and tabular data extraction from scanned document images."""

from .core import (
    AdjacencyRelation,
    DataType,
    Direction,
    DocumentSample,
    MaskPair,
    Rect,
    TableGrid,
    WordBox,
    containment_fraction,
    rect_iou,
)

__all__ = [
    "AdjacencyRelation",
    "DataType",
    "Direction",
    "DocumentSample",
    "MaskPair",
    "Rect",
    "TableGrid",
    "WordBox",
    "containment_fraction",
    "rect_iou",
]

__version__ = "0.1.0"
