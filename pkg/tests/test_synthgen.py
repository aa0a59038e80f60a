import numpy as np
import pytest

from tablex.core import COLUMN_CONTAINMENT_MIN, containment_fraction
from tablex.errors import LayoutError
from tablex.extract import ExtractConfig, detect_rule_line
from tablex.preprocess import classify_data_type
from tablex.synthgen import LEXICON, SynthSpec, generate


class TestSpecValidation:
    def test_bad_table_count(self):
        with pytest.raises(ValueError):
            SynthSpec(n_tables=3)

    def test_bad_column_count(self):
        with pytest.raises(ValueError):
            SynthSpec(n_columns=1)

    def test_too_many_rows_for_page(self):
        with pytest.raises(LayoutError):
            generate(SynthSpec(page_size=128, n_rows=12, font_size=2))


class TestGenerate:
    def test_blank_page(self):
        sample, grids = generate(SynthSpec(n_tables=0, page_size=256))
        assert grids == []
        assert sample.tables == [] and sample.words == []
        assert (sample.image == 255).all()

    def test_deterministic(self):
        spec = SynthSpec(page_size=512, seed=9, ruled=True, font_size=1)
        a_sample, a_grids = generate(spec)
        b_sample, b_grids = generate(spec)
        assert np.array_equal(a_sample.image, b_sample.image)
        assert a_sample.words == b_sample.words
        assert [g.to_dict() for g in a_grids] == [g.to_dict() for g in b_grids]

    def test_word_boxes_have_ink(self):
        sample, _ = generate(SynthSpec(page_size=512, font_size=1, seed=1))
        for w in sample.words:
            patch = sample.image[w.box.y0 : w.box.y1, w.box.x0 : w.box.x1]
            assert (patch < 255).any()

    def test_annotations_satisfy_containment_invariant(self):
        sample, _ = generate(SynthSpec(page_size=512, n_tables=2, n_rows=3,
                                       font_size=1, seed=2))
        assert len(sample.tables) == 2
        for col in sample.columns:
            assert any(
                containment_fraction(col, t) >= COLUMN_CONTAINMENT_MIN
                for t in sample.tables
            )

    def test_words_inside_their_cells(self):
        sample, grids = generate(SynthSpec(page_size=512, n_columns=4, n_rows=5,
                                           font_size=1, seed=3))
        for w in sample.words:
            assert any(containment_fraction(w.box, c) == 1.0 for c in sample.columns)
        grid = grids[0]
        assert len(grid.cells) == 5
        assert all(len(row) == 4 for row in grid.cells)

    def test_dtype_labels_match_classifier(self):
        # lexicon words are chosen so the regex classifier agrees a priori
        for dtype, words in LEXICON.items():
            for w in words:
                assert classify_data_type(w) == dtype

    def test_ruled_lines_detected_between_rows(self):
        spec = SynthSpec(page_size=512, n_columns=3, n_rows=4, ruled=True,
                         font_size=1, seed=4)
        sample, grids = generate(spec)
        cfg = ExtractConfig()
        grid = grids[0]
        for col in grid.columns:
            for (y0a, y1a), (y0b, y1b) in zip(grid.rows, grid.rows[1:]):
                strip = sample.image[y1a:y0b, col.x0 : col.x1]
                assert detect_rule_line(strip, cfg)

    def test_unruled_has_no_lines(self):
        spec = SynthSpec(page_size=512, n_columns=3, n_rows=4, ruled=False,
                         font_size=1, seed=4)
        sample, grids = generate(spec)
        cfg = ExtractConfig()
        grid = grids[0]
        for col in grid.columns:
            for (y0a, y1a), (y0b, y1b) in zip(grid.rows, grid.rows[1:]):
                strip = sample.image[y1a:y0b, col.x0 : col.x1]
                assert not detect_rule_line(strip, cfg)

    def test_multiline_rows_never_fully_multiline(self):
        spec = SynthSpec(page_size=1024, n_columns=3, n_rows=6,
                         multi_line_cell_prob=1.0, font_size=1, seed=5)
        _, grids = generate(spec)
        for row in grids[0].cells:
            assert any(" " not in cell for cell in row)
