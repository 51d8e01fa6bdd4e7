import json
import math

import numpy as np
import pytest

from sketchembed.data.strokes import (StrokeSketch, augment_stroke_removal,
                                      rasterize, sketch_from_doc,
                                      sketch_from_json)


def n_stroke_sketch(n, canvas=256):
    """n horizontal strokes stacked vertically, stroke i at height ~i."""
    step = canvas / (n + 1)
    strokes = [[[10.0, (i + 1) * step], [canvas - 10.0, (i + 1) * step]]
               for i in range(n)]
    return StrokeSketch(strokes=strokes, canvas_w=canvas, canvas_h=canvas)


class TestStrokeSketch:
    def test_basic_construction(self):
        sk = StrokeSketch(strokes=[[[0, 0], [10, 10]]], canvas_w=32,
                          canvas_h=32)
        assert sk.num_strokes == 1

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="at least one"):
            StrokeSketch(strokes=[], canvas_w=32, canvas_h=32)

    def test_rejects_empty_stroke(self):
        with pytest.raises(ValueError, match="stroke 1"):
            StrokeSketch(strokes=[[[1, 1]], []], canvas_w=32, canvas_h=32)

    def test_rejects_point_outside_canvas(self):
        with pytest.raises(ValueError, match="outside"):
            StrokeSketch(strokes=[[[0, 0], [40, 10]]], canvas_w=32,
                         canvas_h=32)

    def test_json_round_trip_is_byte_exact(self):
        sk = n_stroke_sketch(5)
        text = sk.to_json()
        back = sketch_from_json(text)
        assert back.to_json() == text
        assert back.strokes == sk.strokes

    def test_canonical_json_is_sorted_and_compact(self):
        sk = StrokeSketch(strokes=[[[1, 2]]], canvas_w=8, canvas_h=8)
        text = sk.to_json()
        assert " " not in text
        doc = json.loads(text)
        assert list(doc.keys()) == sorted(doc.keys())
        assert doc["version"] == 1

    def test_from_doc_validates_version(self):
        doc = n_stroke_sketch(2).to_doc()
        doc["version"] = 99
        with pytest.raises(ValueError, match="version"):
            sketch_from_doc(doc)

    def test_from_doc_validates_structure(self):
        with pytest.raises(ValueError, match="object"):
            sketch_from_doc([1, 2])
        with pytest.raises(ValueError, match="canvas"):
            sketch_from_doc({"version": 1, "strokes": [[[0, 0]]]})
        with pytest.raises(ValueError, match="strokes"):
            sketch_from_doc({"version": 1, "canvas": {"w": 8, "h": 8}})

    def test_from_json_rejects_garbage(self):
        with pytest.raises(ValueError, match="JSON"):
            sketch_from_json("{not json")


class TestRasterize:
    def test_horizontal_stroke_darkens_its_row(self):
        sk = StrokeSketch(strokes=[[[16, 128], [240, 128]]],
                          canvas_w=256, canvas_h=256)
        img = rasterize(sk, 64, line_width=2)
        assert img.domain == "sketch"
        assert img.pixels.shape == (64, 64)
        row = 32
        assert img.pixels[row, 8:56].mean() < 0.3
        assert img.pixels[5, :].min() > 0.9
        assert img.pixels[58, :].min() > 0.9

    def test_deterministic(self):
        sk = n_stroke_sketch(4)
        a = rasterize(sk, 64)
        b = rasterize(sk, 64)
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_diagonal_ink_coverage(self):
        size, lw = 64, 2
        sk = StrokeSketch(strokes=[[[0, 0], [256, 256]]], canvas_w=256,
                          canvas_h=256)
        img = rasterize(sk, size, line_width=lw)
        ink = (1.0 - img.pixels).sum()
        expected = math.sqrt(2) * size * lw
        assert expected * 0.8 <= ink <= expected * 1.2

    def test_single_point_stroke_leaves_a_dot(self):
        sk = StrokeSketch(strokes=[[[128, 128]]], canvas_w=256, canvas_h=256)
        img = rasterize(sk, 64, line_width=3)
        assert img.pixels.min() < 0.5
        dark = np.argwhere(img.pixels < 0.5)
        center = dark.mean(axis=0)
        assert abs(center[0] - 32) <= 2 and abs(center[1] - 32) <= 2

    def test_size_and_width_validation(self):
        sk = n_stroke_sketch(1)
        with pytest.raises(ValueError, match="size"):
            rasterize(sk, 16)
        with pytest.raises(ValueError, match="width"):
            rasterize(sk, 64, line_width=0)


class TestStrokeRemoval:
    def test_sketch_below_threshold_unchanged(self):
        sk = n_stroke_sketch(9)
        out = augment_stroke_removal(sk, seed=0)
        assert out.strokes == sk.strokes

    def test_first_group_always_survives(self):
        sk = n_stroke_sketch(12)  # groups of 3
        for seed in range(200):
            out = augment_stroke_removal(sk, seed=seed)
            assert out.strokes[:3] == sk.strokes[:3]

    def test_counts_land_on_group_lattice(self):
        sk = n_stroke_sketch(12)
        seen = set()
        for seed in range(400):
            seen.add(augment_stroke_removal(sk, seed=seed).num_strokes)
        assert seen == {3, 6, 9, 12}

    def test_result_is_subsequence_in_drawing_order(self):
        sk = n_stroke_sketch(17)
        for seed in range(100):
            out = augment_stroke_removal(sk, seed=seed)
            # strokes are distinct here, so index lookup is well-defined
            idx = [sk.strokes.index(s) for s in out.strokes]
            assert idx == sorted(idx)
            assert len(set(idx)) == len(idx)

    def test_uneven_split_gives_extras_to_early_groups(self):
        # 14 strokes -> groups of 4,4,3,3; first group = strokes 0..3
        sk = n_stroke_sketch(14)
        for seed in range(50):
            out = augment_stroke_removal(sk, seed=seed)
            assert out.strokes[:4] == sk.strokes[:4]
            assert out.num_strokes in {4, 7, 8, 10, 11, 14}

    def test_each_optional_group_kept_half_the_time(self):
        sk = n_stroke_sketch(12)
        draws = 10_000
        kept = np.zeros(3)
        for seed in range(draws):
            out = augment_stroke_removal(sk, seed=seed)
            present = {tuple(map(tuple, s)) for s in out.strokes}
            for gi in range(3):
                marker = tuple(map(tuple, sk.strokes[3 * (gi + 1)]))
                if marker in present:
                    kept[gi] += 1
        rates = kept / draws
        assert (np.abs(rates - 0.5) <= 0.02).all()

    def test_deterministic_for_seed(self):
        sk = n_stroke_sketch(20)
        a = augment_stroke_removal(sk, seed=42)
        b = augment_stroke_removal(sk, seed=42)
        assert a.strokes == b.strokes
