"""Turning raw document samples into network-ready inputs.

Pipeline: histogram equalization -> resize to the network resolution ->
regex data-type classification -> color highlighting of word boxes with
random word drops -> saturating pixel-wise addition onto the page image.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import cv2
import numpy as np

from .core import DataType, DocumentSample, Rect, WordBox

DEFAULT_TARGET_SIZE = 1024
DEFAULT_DROP_PROB = 0.02

DEFAULT_PALETTE: dict[DataType, tuple[int, int, int]] = {
    DataType.ALPHABETIC: (0, 0, 255),
    DataType.NUMERIC: (255, 0, 0),
    DataType.ALPHANUMERIC: (0, 255, 0),
    DataType.DATE: (255, 0, 255),
    DataType.CURRENCY: (255, 255, 0),
    DataType.OTHER: (0, 255, 255),
}


@dataclass(frozen=True)
class HighlightPalette:
    colors: dict[DataType, tuple[int, int, int]] = field(
        default_factory=lambda: dict(DEFAULT_PALETTE)
    )

    def __post_init__(self):
        vals = list(self.colors.values())
        if len(set(vals)) != len(vals):
            raise ValueError("palette colors must be distinct")
        if (0, 0, 0) in vals or (255, 255, 255) in vals:
            raise ValueError("palette may not contain pure black or white")

    def __getitem__(self, dtype: DataType) -> tuple[int, int, int]:
        return self.colors[dtype]


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: int = DEFAULT_TARGET_SIZE
    drop_prob: float = DEFAULT_DROP_PROB
    palette: HighlightPalette = field(default_factory=HighlightPalette)

    def __post_init__(self):
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must be in [0, 1)")
        if self.target_size <= 0:
            raise ValueError("target_size must be positive")


def equalize_histogram(image: np.ndarray) -> np.ndarray:
    """Global per-channel histogram equalization, output in [0, 255]."""
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim == 2:
        return _equalize_channel(img)
    return np.dstack([_equalize_channel(img[..., c]) for c in range(img.shape[2])])


def _equalize_channel(ch: np.ndarray) -> np.ndarray:
    hist = np.bincount(ch.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    nonzero = cdf[hist > 0]
    cdf_min = nonzero[0]
    total = cdf[-1]
    if total == cdf_min:  # constant channel
        return ch.copy()
    lut = np.round((cdf - cdf_min) / (total - cdf_min) * 255.0).astype(np.uint8)
    return lut[ch]


def _scale_rect(r: Rect, sx: float, sy: float) -> Rect:
    def rnd(v: float) -> int:
        return int(np.floor(v + 0.5))

    x0, y0 = rnd(r.x0 * sx), rnd(r.y0 * sy)
    x1, y1 = rnd(r.x1 * sx), rnd(r.y1 * sy)
    return Rect(x0, y0, max(x1, x0 + 1), max(y1, y0 + 1))


def resize_sample(sample: DocumentSample, out_h: int, out_w: int) -> DocumentSample:
    """Resize image (bilinear, aspect ratio NOT preserved) to out_h x out_w RGB
    and scale all boxes by the same factors."""
    img = sample.image
    if img.ndim == 2:
        img = cv2.cvtColor(img, cv2.COLOR_GRAY2RGB)
    resized = cv2.resize(img, (out_w, out_h), interpolation=cv2.INTER_LINEAR)
    sy = out_h / sample.height
    sx = out_w / sample.width
    return DocumentSample(
        image=resized,
        words=[w.with_box(_scale_rect(w.box, sx, sy)) for w in sample.words],
        tables=[_scale_rect(t, sx, sy) for t in sample.tables],
        columns=[_scale_rect(c, sx, sy) for c in sample.columns],
    )


_CURRENCY_RE = re.compile(r"^[+-]?[$€£₹]\s?\d[\d,]*(\.\d+)?$|^[+-]?\d[\d,]*(\.\d+)?[$€£₹]$")
_DATE_RE = re.compile(
    r"^\d{4}-\d{1,2}-\d{1,2}$"  # ISO
    r"|^\d{1,2}[/.-]\d{1,2}[/.-]\d{2,4}$"  # d/m/y variants
    r"|^\d{1,2}(st|nd|rd|th)?[- ]?(Jan|Feb|Mar|Apr|May|Jun|Jul|Aug|Sep|Oct|Nov|Dec)[a-z]*[-, ]*\d{0,4}$"
    r"|^(Jan|Feb|Mar|Apr|May|Jun|Jul|Aug|Sep|Oct|Nov|Dec)[a-z]*[- ]\d{1,2},?\s*\d{0,4}$",
    re.IGNORECASE,
)
_NUMERIC_RE = re.compile(r"^[+-]?\d[\d,]*(\.\d+)?%?$")
_ALPHABETIC_RE = re.compile(r"^[A-Za-z]+([-'][A-Za-z]+)*$")


def classify_data_type(text: str) -> DataType:
    """Classify a word by regular expressions.

    Priority: CURRENCY > DATE > NUMERIC > ALPHANUMERIC > ALPHABETIC > OTHER.
    """
    t = text.strip()
    if not t:
        return DataType.OTHER
    if _CURRENCY_RE.match(t):
        return DataType.CURRENCY
    if _DATE_RE.match(t):
        return DataType.DATE
    if _NUMERIC_RE.match(t):
        return DataType.NUMERIC
    has_alpha = any(c.isalpha() for c in t)
    has_digit = any(c.isdigit() for c in t)
    if has_alpha and has_digit:
        return DataType.ALPHANUMERIC
    if _ALPHABETIC_RE.match(t):
        return DataType.ALPHABETIC
    return DataType.OTHER


def classify_words(words: list[WordBox]) -> list[WordBox]:
    return [w.with_dtype(classify_data_type(w.text)) for w in words]


def highlight_words(
    image: np.ndarray,
    words: list[WordBox],
    palette: HighlightPalette | None = None,
    drop_prob: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Shade word boxes by data type on a black overlay, then add the overlay
    pixel-wise to the page image with saturation at 255.

    Each word is independently dropped with probability drop_prob to simulate
    incomplete OCR detections; pass a seeded rng for reproducibility.
    """
    palette = palette or HighlightPalette()
    if rng is None:
        rng = np.random.default_rng()
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim == 2:
        img = cv2.cvtColor(img, cv2.COLOR_GRAY2RGB)
    h, w = img.shape[:2]
    overlay = np.zeros_like(img)
    for word in words:
        if drop_prob > 0.0 and rng.random() < drop_prob:
            continue
        b = word.box
        x0, y0 = max(b.x0, 0), max(b.y0, 0)
        x1, y1 = min(b.x1, w), min(b.y1, h)
        if x1 <= x0 or y1 <= y0:
            continue
        overlay[y0:y1, x0:x1] = palette[word.dtype]
    out = img.astype(np.int16) + overlay.astype(np.int16)
    return np.clip(out, 0, 255).astype(np.uint8)


def prepare_input(
    sample: DocumentSample,
    config: PreprocessConfig | None = None,
    seed: int | None = None,
    highlight: bool = True,
) -> DocumentSample:
    """Full preprocessing: equalize, resize, classify, highlight."""
    config = config or PreprocessConfig()
    equalized = DocumentSample(
        image=equalize_histogram(sample.image),
        words=sample.words,
        tables=sample.tables,
        columns=sample.columns,
    )
    resized = resize_sample(equalized, config.target_size, config.target_size)
    resized.words = classify_words(resized.words)
    if highlight:
        rng = np.random.default_rng(seed)
        resized.image = highlight_words(
            resized.image, resized.words, config.palette, config.drop_prob, rng
        )
    return resized
