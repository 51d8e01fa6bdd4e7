import numpy as np
import pytest
from PIL import Image
from scipy import ndimage

from sketchembed.data.imaging import RasterImage, extract_edges, skeletonize
from sketchembed.data.strokes import rasterize, sketch_from_json
from sketchembed.data.synthetic import (PHOTO_SIZE, SHAPE_FAMILIES,
                                        make_instance_outline, render_photo,
                                        synth_generate, trace_sketch,
                                        _category_tint)


def load_photo(manifest, item):
    with Image.open(manifest.resolve(item)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


class TestGeneration:
    def test_counts_and_balance(self, tmp_path):
        man = synth_generate(num_categories=12, photos_per_cat=20,
                             sketches_per_cat=20, seed=3, out_dir=tmp_path)
        assert len(man) == 480
        assert len(man.categories) == 12
        for cat in man.categories:
            sub = man.filter_categories([cat])
            assert len(sub.photos()) == 20
            assert len(sub.sketches()) == 20

    def test_same_seed_identical_output(self, tmp_path):
        a = synth_generate(4, 3, 4, seed=9, out_dir=tmp_path / "a")
        b = synth_generate(4, 3, 4, seed=9, out_dir=tmp_path / "b")
        assert [i.id for i in a] == [i.id for i in b]
        assert [i.path for i in a] == [i.path for i in b]
        for ia, ib in zip(a, b):
            assert a.resolve(ia).read_bytes() == b.resolve(ib).read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a = synth_generate(2, 2, 2, seed=1, out_dir=tmp_path / "a")
        b = synth_generate(2, 2, 2, seed=2, out_dir=tmp_path / "b")
        pa, pb = a.photos()[0], b.photos()[0]
        assert a.resolve(pa).read_bytes() != b.resolve(pb).read_bytes()

    def test_min_categories_enforced(self, tmp_path):
        with pytest.raises(ValueError, match="2"):
            synth_generate(1, 2, 2, seed=0, out_dir=tmp_path)

    def test_split_and_instance_links(self, synth_dataset):
        man = synth_dataset
        for cat in man.categories:
            sub = man.filter_categories([cat])
            train = sub.sketches("train")
            val = sub.sketches("validation")
            assert len(train) >= 1 and len(val) >= 1
            assert {i.id for i in train}.isdisjoint({i.id for i in val})
            photo_groups = {p.instance_group for p in sub.photos()}
            for s in sub.sketches():
                assert s.instance_group in photo_groups

    def test_manifest_csv_written(self, synth_dataset):
        assert (synth_dataset.root / "manifest.csv").exists()

    def test_families_are_distinct_generators(self):
        names = [n for n, _ in SHAPE_FAMILIES]
        assert len(names) == len(set(names)) == 16


class TestImagesLookRight:
    def test_photo_shape_and_range(self, synth_dataset):
        man = synth_dataset
        arr = load_photo(man, man.photos()[0])
        assert arr.shape == (PHOTO_SIZE, PHOTO_SIZE, 3)
        assert arr.min() >= 0.0 and arr.max() <= 1.0
        # shape fill darker than background: central pixel vs corner
        assert arr[40, 40].mean() < arr[3, 3].mean()

    def test_sketch_docs_parse_and_rasterize(self, synth_dataset):
        man = synth_dataset
        item = man.sketches()[0]
        sk = sketch_from_json(man.resolve(item).read_text())
        assert 2 <= sk.num_strokes <= 5
        img = rasterize(sk, 64)
        assert (img.pixels < 0.5).sum() > 30

    def test_nearest_neighbor_beats_chance(self, synth_dataset):
        """Leave-one-out 1-NN on raw photo pixels, photo -> photo."""
        man = synth_dataset
        photos = man.photos()
        X = np.stack([load_photo(man, p).ravel() for p in photos])
        cats = np.array([p.category for p in photos])
        d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        hits = cats[d2.argmin(axis=1)] == cats
        accuracy = hits.mean()
        chance = 1.0 / len(man.categories)
        assert accuracy >= 2 * chance

    def test_sketch_matches_photo_edges(self, synth_dataset):
        """Cross-domain solvability: skeletonized sketch vs photo edge map.

        Both are thin curves, so each is dilated by one pixel before the
        overlap is measured.
        """
        man = synth_dataset
        ball = np.ones((3, 3), dtype=bool)
        checked = 0
        ious = []
        for cat in man.categories[:6]:
            sub = man.filter_categories([cat])
            sketch_item = sub.sketches()[0]
            photo_item = sub.by_id(sketch_item.instance_group)
            sk = sketch_from_json(man.resolve(sketch_item).read_text())
            thin = skeletonize(rasterize(sk, PHOTO_SIZE, line_width=2))
            a = ndimage.binary_dilation(thin.pixels < 0.5, ball)
            photo = load_photo(man, photo_item)
            edges = extract_edges(RasterImage(photo, "photo"), 0.2, 0.5)
            b = ndimage.binary_dilation(edges.pixels < 0.5, ball)
            iou = (a & b).sum() / (a | b).sum()
            ious.append(iou)
            checked += 1
        assert checked == 6
        assert min(ious) >= 0.5, f"per-category IoUs: {ious}"


class TestBuildingBlocks:
    def test_instance_outline_deterministic(self):
        name1, o1 = make_instance_outline(3, 7, seed=11)
        name2, o2 = make_instance_outline(3, 7, seed=11)
        assert name1 == name2
        np.testing.assert_array_equal(o1, o2)
        _, o3 = make_instance_outline(3, 8, seed=11)
        assert not np.array_equal(o1, o3)

    def test_outline_stays_in_frame(self):
        for ci in range(16):
            _, outline = make_instance_outline(ci, 0, seed=5)
            assert outline.min() > 0.05 and outline.max() < 0.95

    def test_render_photo_fills_outline(self):
        _, outline = make_instance_outline(1, 0, seed=2)  # a square
        rng = np.random.default_rng(0)
        img = render_photo(outline, _category_tint(1), rng)
        inside = img.gray()[38:42, 38:42].mean()
        corner = img.gray()[0:4, 0:4].mean()
        assert inside < 0.5 < corner

    def test_trace_sketch_follows_outline(self):
        _, outline = make_instance_outline(7, 0, seed=2)  # a circle
        rng = np.random.default_rng(4)
        sk = trace_sketch(outline, rng)
        pts = np.array([p for s in sk.strokes for p in s]) / sk.canvas_w
        # every traced point lies near the source outline
        d = np.linalg.norm(pts[:, None, :] - outline[None, :, :], axis=2)
        assert d.min(axis=1).max() < 0.03
