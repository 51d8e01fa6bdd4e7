import numpy as np
import pytest
from scipy import ndimage

from sketchembed.data.imaging import (RasterImage, GeometricParams,
                                      apply_geometric, augment_geometric,
                                      center_crop, draw_geometric_params,
                                      extract_edges, skeletonize)


def blank(h, w):
    return np.ones((h, w), dtype=np.float32)


def ink_mask(img):
    return img.pixels < 0.5


class TestRasterImage:
    def test_valid_grayscale(self):
        img = RasterImage(blank(8, 8), "sketch")
        assert img.size == (8, 8)
        assert img.pixels.dtype == np.float32

    def test_valid_color(self):
        img = RasterImage(np.zeros((4, 4, 3)), "photo")
        assert img.size == (4, 4)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError, match="H,W"):
            RasterImage(np.zeros((4, 4, 2)), "photo")

    def test_rejects_bad_domain(self):
        with pytest.raises(ValueError, match="domain"):
            RasterImage(blank(4, 4), "painting")

    def test_rejects_out_of_range(self):
        arr = blank(4, 4)
        arr[0, 0] = 2.0
        with pytest.raises(ValueError, match="outside"):
            RasterImage(arr, "sketch")

    def test_gray_of_color_uses_luma_weights(self):
        arr = np.zeros((1, 1, 3), dtype=np.float32)
        arr[0, 0] = [1.0, 0.0, 0.0]
        img = RasterImage(arr, "photo")
        assert img.gray()[0, 0] == pytest.approx(0.299, abs=1e-6)


class TestSkeletonize:
    def test_blank_image_unchanged(self):
        img = RasterImage(blank(16, 16), "sketch")
        out = skeletonize(img)
        np.testing.assert_array_equal(out.pixels, img.pixels)

    def test_single_pixel_line_is_idempotent(self):
        arr = blank(16, 16)
        arr[8, 2:14] = 0.0
        out = skeletonize(RasterImage(arr, "sketch"))
        np.testing.assert_array_equal(ink_mask(out),
                                      ink_mask(RasterImage(arr, "sketch")))

    def test_thick_bar_thins_to_single_pixel_width(self):
        arr = blank(24, 40)
        arr[10:15, 4:36] = 0.0  # 5 pixels thick, 32 long
        out = skeletonize(RasterImage(arr, "sketch"))
        fg = ink_mask(out)
        # every occupied column holds exactly one pixel
        col_counts = fg.sum(axis=0)
        occupied = col_counts[col_counts > 0]
        assert occupied.size > 0
        assert (occupied == 1).all()
        # the skeleton spans the original extent minus endpoint erosion,
        # which is about half the bar thickness on each side
        cols = np.where(col_counts > 0)[0]
        assert cols.min() <= 4 + 3
        assert cols.max() >= 36 - 1 - 3
        # and stays inside the original ink
        assert not (fg & ~ink_mask(RasterImage(arr, "sketch"))).any()

    def test_component_count_preserved(self):
        arr = blank(40, 40)
        arr[5:10, 5:30] = 0.0
        arr[20:26, 8:12] = 0.0
        arr[30:34, 25:38] = 0.0
        out = skeletonize(RasterImage(arr, "sketch"))
        eight = np.ones((3, 3), dtype=int)
        _, n_before = ndimage.label(ink_mask(RasterImage(arr, "sketch")),
                                    structure=eight)
        _, n_after = ndimage.label(ink_mask(out), structure=eight)
        assert n_after == n_before == 3

    def test_keeps_domain(self):
        arr = blank(8, 8)
        arr[4, 2:6] = 0.0
        assert skeletonize(RasterImage(arr, "edgemap")).domain == "edgemap"

    def test_output_is_binary(self):
        arr = blank(20, 20)
        arr[5:15, 5:15] = 0.2
        out = skeletonize(RasterImage(arr, "sketch"))
        assert set(np.unique(out.pixels)) <= {0.0, 1.0}


class TestExtractEdges:
    def test_constant_image_gives_empty_map(self):
        img = RasterImage(np.full((32, 32, 3), 0.5, dtype=np.float32),
                          "photo")
        out = extract_edges(img, 0.2, 0.6)
        assert (out.pixels == 1.0).all()
        assert out.domain == "edgemap"

    def test_half_plane_gives_single_vertical_line(self):
        arr = np.zeros((32, 32), dtype=np.float32)
        arr[:, 16:] = 1.0
        out = extract_edges(RasterImage(arr, "photo"), 0.2, 0.6)
        edges = out.pixels == 0.0
        rows_hit = edges.any(axis=1)
        assert rows_hit[4:-4].all()
        # away from the border, each row crosses the edge exactly once
        widths = edges[4:-4].sum(axis=1)
        assert (widths == 1).all()
        cols = np.where(edges.any(axis=0))[0]
        assert abs(int(cols.mean()) - 16) <= 1

    def test_circle_recovered_on_clutter(self):
        rng = np.random.default_rng(7)
        h = w = 64
        yy, xx = np.mgrid[0:h, 0:w]
        disc = (yy - 32) ** 2 + (xx - 32) ** 2 <= 18 ** 2
        arr = np.full((h, w), 0.8)
        arr[disc] = 0.2
        arr += rng.normal(0.0, 0.05, size=arr.shape)
        img = RasterImage(np.clip(arr, 0, 1).astype(np.float32), "photo")
        out = extract_edges(img, 0.15, 0.4)
        edges = out.pixels == 0.0

        # true boundary: disc pixels adjacent to background
        eroded = ndimage.binary_erosion(disc)
        boundary = disc & ~eroded
        # recall within a 1-pixel tolerance band
        near_edge = ndimage.binary_dilation(edges, np.ones((3, 3), dtype=bool))
        recall = near_edge[boundary].mean()
        assert recall >= 0.8

    def test_output_binary_and_no_isolated_pixels(self):
        rng = np.random.default_rng(3)
        arr = rng.random((48, 48)).astype(np.float32)
        arr[10:38, 10:38] *= 0.3
        out = extract_edges(RasterImage(arr, "photo"), 0.1, 0.3)
        assert set(np.unique(out.pixels)) <= {0.0, 1.0}
        edges = out.pixels == 0.0
        if edges.any():
            kernel = np.ones((3, 3), dtype=int)
            kernel[1, 1] = 0
            counts = ndimage.convolve(edges.astype(int), kernel,
                                      mode="constant")
            assert (counts[edges] >= 1).all()

    def test_threshold_validation(self):
        img = RasterImage(blank(8, 8), "photo")
        with pytest.raises(ValueError, match="low"):
            extract_edges(img, 0.6, 0.2)
        with pytest.raises(ValueError, match="low"):
            extract_edges(img, -0.1, 0.5)
        with pytest.raises(ValueError, match="low"):
            extract_edges(img, 0.2, 1.5)


class TestGeometric:
    def test_identity_params_center_crop(self):
        rng = np.random.default_rng(0)
        arr = rng.random((40, 40)).astype(np.float32)
        img = RasterImage(arr, "photo")
        out = center_crop(img, 32)
        r0 = (40 - 32 + 1) // 2
        np.testing.assert_allclose(out.pixels, arr[r0:r0 + 32, r0:r0 + 32],
                                   atol=1e-6)

    def test_deterministic_for_seed(self):
        rng = np.random.default_rng(1)
        img = RasterImage(rng.random((50, 50)).astype(np.float32), "photo")
        a = augment_geometric(img, 40, seed=123)
        b = augment_geometric(img, 40, seed=123)
        np.testing.assert_array_equal(a.pixels, b.pixels)
        c = augment_geometric(img, 40, seed=124)
        assert not np.array_equal(a.pixels, c.pixels)

    def test_param_ranges_over_many_draws(self):
        scales, rots, flips = [], [], []
        for seed in range(1000):
            p = draw_geometric_params(seed)
            scales.append(p.scale)
            rots.append(p.rotation_deg)
            flips.append(p.flip)
            assert 0.0 <= p.crop_u < 1.0
            assert 0.0 <= p.crop_v < 1.0
        scales = np.array(scales)
        rots = np.array(rots)
        assert scales.min() >= 0.9 and scales.max() <= 1.1
        assert scales.min() < 0.92 and scales.max() > 1.08
        assert rots.min() >= -5.0 and rots.max() <= 5.0
        assert rots.min() < -4.0 and rots.max() > 4.0
        frac = np.mean(flips)
        assert 0.45 < frac < 0.55

    def test_output_shape_and_range(self):
        rng = np.random.default_rng(2)
        img = RasterImage(rng.random((64, 64, 3)).astype(np.float32),
                          "photo")
        out = augment_geometric(img, 48, seed=9)
        assert out.pixels.shape == (48, 48, 3)
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0

    def test_flip_mirrors_columns(self):
        arr = np.zeros((40, 40), dtype=np.float32)
        arr[:, :20] = 1.0
        params = GeometricParams(scale=1.0, rotation_deg=0.0, flip=True,
                                 crop_u=0.5, crop_v=0.5)
        out = apply_geometric(RasterImage(arr, "photo"), params, 40)
        assert (out.pixels[:, :20] == 0.0).all()
        assert (out.pixels[:, 20:] == 1.0).all()

    def test_rejects_crop_larger_than_scaled_image(self):
        img = RasterImage(blank(40, 40), "photo")
        params = GeometricParams(scale=0.9, rotation_deg=0.0, flip=False,
                                 crop_u=0.5, crop_v=0.5)
        with pytest.raises(ValueError, match="smaller"):
            apply_geometric(img, params, 40)

    def test_rotation_moves_mass_as_expected(self):
        # a vertical bar rotated by 5 degrees should tilt measurably
        arr = np.ones((80, 80), dtype=np.float32)
        arr[10:70, 39:41] = 0.0
        params = GeometricParams(scale=1.0, rotation_deg=5.0, flip=False,
                                 crop_u=0.5, crop_v=0.5)
        out = apply_geometric(RasterImage(arr, "photo"), params, 64)
        fg = out.pixels < 0.5
        rows = np.where(fg.any(axis=1))[0]
        top_cols = np.where(fg[rows[1]])[0].mean()
        bot_cols = np.where(fg[rows[-2]])[0].mean()
        assert abs(top_cols - bot_cols) > 2.0
