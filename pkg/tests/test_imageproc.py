import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from saic import imageproc, raster
from saic.errors import (
    DimensionMismatchError,
    EmptyMaskError,
    EmptySelectionError,
    RegionOutOfBoundsError,
)
from saic.imageproc import (
    Region,
    blend_hf,
    center_align,
    color_histogram,
    feathered_composite,
    highpass,
    normalize_hf_to_u8,
    stitch,
)

u8_images = hnp.arrays(
    dtype=np.uint8,
    shape=hnp.array_shapes(min_dims=2, max_dims=2, min_side=3, max_side=16),
    elements=st.integers(0, 255),
)


def _ramp_image(h=3, w=3, step=10):
    # value depends on column only: 0, step, 2*step, ...
    row = (np.arange(w) * step).astype(np.uint8)
    plane = np.tile(row, (h, 1))
    return np.repeat(plane[:, :, None], 3, axis=2)


class TestHighpass:
    def test_sobel_hand_values_on_column_ramp(self):
        # ramp 0/10/20 per column; Sobel x-kernel column sums are (-4, 0, 4)
        hf = highpass(_ramp_image())
        assert hf.shape == (3, 3, 3)
        assert hf[1, 1, 0] == pytest.approx(80.0)  # 4 * 20
        assert hf[1, 0, 0] == pytest.approx(40.0)  # replicate-padded left edge
        assert hf[0, 0, 1] == pytest.approx(40.0)
        # all rows identical: zero vertical gradient everywhere
        np.testing.assert_allclose(hf[:, 1, 2], 80.0)

    def test_laplacian_hand_values(self):
        img = np.zeros((3, 3), dtype=np.uint8)
        img[1, 1] = 9
        hf = highpass(img, method="laplacian")
        assert hf[1, 1] == pytest.approx(36.0)  # |0+0+0+0 - 4*9|
        assert hf[0, 1] == pytest.approx(9.0)  # one on-neighbor below
        assert hf[0, 0] == pytest.approx(0.0)

    def test_constant_image_maps_to_zero(self):
        for method in ("sobel", "laplacian"):
            hf = highpass(np.full((8, 5, 3), 77, dtype=np.uint8), method=method)
            np.testing.assert_array_equal(hf, np.zeros((8, 5, 3)))

    @settings(max_examples=30, deadline=None)
    @given(img=u8_images, offset=st.integers(1, 100))
    def test_dc_offset_invariance(self, img, offset):
        base = (img % 120).astype(np.uint8)  # keep headroom for the offset
        shifted = (base + offset).astype(np.uint8)
        for method in ("sobel", "laplacian"):
            np.testing.assert_array_equal(
                highpass(base, method=method), highpass(shifted, method=method)
            )

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError):
            highpass(np.zeros((4, 4), dtype=np.uint8), method="dog")

    def test_grayscale_returns_2d(self):
        assert highpass(np.zeros((5, 6), dtype=np.uint8)).shape == (5, 6)


class TestBlend:
    def test_hand_example(self):
        ht = np.full((2, 2), 100.0)
        hr = np.full((2, 2), 20.0)
        np.testing.assert_allclose(blend_hf(ht, hr, 0.1), np.full((2, 2), 28.0))

    def test_alpha_one_returns_candidate_exactly(self):
        rng = np.random.default_rng(5)
        ht, hr = rng.normal(size=(4, 4, 3)), rng.normal(size=(4, 4, 3))
        np.testing.assert_array_equal(blend_hf(ht, hr, 1.0), ht)

    def test_alpha_zero_returns_reference_exactly(self):
        rng = np.random.default_rng(6)
        ht, hr = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        np.testing.assert_array_equal(blend_hf(ht, hr, 0.0), hr)

    @settings(max_examples=40, deadline=None)
    @given(
        data=st.data(),
        alpha=st.floats(0.0, 1.0, allow_nan=False),
    )
    def test_additivity(self, data, alpha):
        shape = (5, 4)
        maps = [
            data.draw(
                hnp.arrays(np.float64, shape, elements=st.floats(-100, 100, allow_nan=False))
            )
            for _ in range(4)
        ]
        ht1, ht2, hr1, hr2 = maps
        lhs = blend_hf(ht1 + ht2, hr1 + hr2, alpha)
        rhs = blend_hf(ht1, hr1, alpha) + blend_hf(ht2, hr2, alpha)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionMismatchError):
            blend_hf(np.zeros((2, 2)), np.zeros((3, 2)), 0.5)

    @pytest.mark.parametrize("alpha", [-0.01, 1.01, 2.0])
    def test_alpha_out_of_range_rejected(self, alpha):
        with pytest.raises(ValueError):
            blend_hf(np.zeros((2, 2)), np.zeros((2, 2)), alpha)


class TestNormalize:
    def test_minmax_endpoints(self):
        hf = np.array([[-1.0, 0.0, 1.0]])
        out = normalize_hf_to_u8(hf)
        assert out[0, 0] == 0 and out[0, 2] == 255
        assert out[0, 1] == 128  # rint(127.5) rounds half to even

    def test_constant_map_goes_to_zeros(self):
        np.testing.assert_array_equal(
            normalize_hf_to_u8(np.full((3, 3), 4.2)), np.zeros((3, 3), dtype=np.uint8)
        )


class TestRegion:
    def test_nonpositive_bbox_rejected(self):
        with pytest.raises(RegionOutOfBoundsError):
            Region(bbox=(0, 0, 0, 5), shape_mask=np.zeros((5, 0), dtype=np.uint8))

    def test_mask_shape_must_match_bbox(self):
        with pytest.raises(DimensionMismatchError):
            Region(bbox=(0, 0, 4, 4), shape_mask=np.zeros((3, 4), dtype=np.uint8))

    def test_require_inside(self):
        region = Region(bbox=(6, 6, 6, 6), shape_mask=np.full((6, 6), 255, dtype=np.uint8))
        region.require_inside(np.zeros((12, 12, 3), dtype=np.uint8))
        with pytest.raises(RegionOutOfBoundsError):
            region.require_inside(np.zeros((11, 12, 3), dtype=np.uint8))


class TestStitch:
    def _setup(self, seed=7):
        rng = np.random.default_rng(seed)
        bg = rng.integers(0, 256, (16, 14, 3), dtype=np.uint8)
        mask = np.zeros((5, 6), dtype=np.uint8)
        mask[1:4, 2:5] = 255
        region = Region(bbox=(3, 8, 6, 5), shape_mask=mask)
        hf = rng.normal(size=(5, 6, 3)) * 30
        return bg, hf, region, mask

    def test_outside_bbox_bit_identical(self):
        bg, hf, region, _ = self._setup()
        out = stitch(bg, hf, region)
        x, y, w, h = region.bbox
        untouched = np.ones(bg.shape[:2], dtype=bool)
        untouched[y : y + h, x : x + w] = False
        np.testing.assert_array_equal(out[untouched], bg[untouched])

    def test_masked_pixels_get_normalized_hf(self):
        bg, hf, region, mask = self._setup()
        out = stitch(bg, hf, region)
        x, y, w, h = region.bbox
        window = out[y : y + h, x : x + w]
        sel = raster.mask_on(mask)
        np.testing.assert_array_equal(window[sel], normalize_hf_to_u8(hf)[sel])
        np.testing.assert_array_equal(window[~sel], bg[y : y + h, x : x + w][~sel])

    def test_single_channel_hf_broadcasts(self):
        bg, hf, region, mask = self._setup()
        out = stitch(bg, hf[:, :, 0], region)
        x, y, w, h = region.bbox
        window = out[y : y + h, x : x + w]
        sel = raster.mask_on(mask)
        assert (window[sel][:, 0] == window[sel][:, 1]).all()

    def test_wrong_hf_size_rejected(self):
        bg, hf, region, _ = self._setup()
        with pytest.raises(DimensionMismatchError):
            stitch(bg, hf[:3], region)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_source_background_never_mutated(self, seed):
        bg, hf, region, _ = self._setup(seed)
        before = bg.copy()
        stitch(bg, hf, region)
        np.testing.assert_array_equal(bg, before)


class TestCenterAlign:
    def test_single_pixel_moves_to_canvas_center(self):
        crop = np.zeros((9, 9, 3), dtype=np.uint8)
        crop[0, 0] = 200
        mask = np.zeros((9, 9), dtype=np.uint8)
        mask[0, 0] = 255
        out_crop, out_mask = center_align(crop, mask, (9, 9))
        assert out_mask[4, 4] == 255 and out_mask.sum() == 255
        assert tuple(out_crop[4, 4]) == (200, 200, 200)
        # everything not covered by the translated crop is neutral gray
        assert out_crop[0, 0, 0] == 128

    def test_already_centered_is_unchanged(self):
        rng = np.random.default_rng(8)
        crop = rng.integers(0, 256, (7, 7, 3), dtype=np.uint8)
        mask = np.zeros((7, 7), dtype=np.uint8)
        mask[3, 3] = 255
        out_crop, out_mask = center_align(crop, mask, (7, 7))
        np.testing.assert_array_equal(out_crop, crop)
        np.testing.assert_array_equal(out_mask, mask)

    def test_empty_mask_rejected(self):
        with pytest.raises(EmptyMaskError):
            center_align(
                np.zeros((4, 4, 3), dtype=np.uint8), np.zeros((4, 4), dtype=np.uint8), (4, 4)
            )

    def test_mismatched_shapes_rejected(self):
        with pytest.raises(DimensionMismatchError):
            center_align(
                np.zeros((4, 4, 3), dtype=np.uint8), np.zeros((5, 4), dtype=np.uint8), (4, 4)
            )


class TestFeatheredComposite:
    def _bits(self):
        bg = np.full((10, 10, 3), 40, dtype=np.uint8)
        crop = np.full((4, 4, 3), 220, dtype=np.uint8)
        mask = np.full((4, 4), 255, dtype=np.uint8)
        region = Region(bbox=(2, 3, 4, 4), shape_mask=mask)
        return bg, crop, mask, region

    def test_radius_zero_hard_paste(self):
        bg, crop, mask, region = self._bits()
        out = feathered_composite(bg, crop, mask, region, feather_radius=0)
        np.testing.assert_array_equal(out[3:7, 2:6], crop)
        out[3:7, 2:6] = 40
        np.testing.assert_array_equal(out, bg)

    def test_feathered_corner_alpha(self):
        bg, crop, mask, region = self._bits()
        out = feathered_composite(bg, crop, mask, region, feather_radius=1)
        # corner of an all-on 4x4 mask: 4 of 9 window samples inside
        expected_corner = round(4 / 9 * 220 + 5 / 9 * 40)
        assert out[3, 2, 0] == expected_corner
        # interior pixels have full alpha
        assert out[4, 3, 0] == 220

    def test_never_writes_outside_bbox(self):
        bg, crop, mask, region = self._bits()
        out = feathered_composite(bg, crop, mask, region, feather_radius=3)
        sentinel = np.ones(bg.shape[:2], dtype=bool)
        sentinel[3:7, 2:6] = False
        np.testing.assert_array_equal(out[sentinel], bg[sentinel])

    def test_zero_alpha_pixels_untouched(self):
        bg, crop, mask, region = self._bits()
        mask = mask.copy()
        mask[:, :2] = 0  # left half off
        out = feathered_composite(bg, crop, mask, region, feather_radius=0)
        np.testing.assert_array_equal(out[3:7, 2:4], bg[3:7, 2:4])

    def test_size_mismatch_rejected(self):
        bg, crop, mask, region = self._bits()
        with pytest.raises(DimensionMismatchError):
            feathered_composite(bg, crop[:3], mask, region)


class TestColorHistogram:
    def test_black_and_white_pixels_split_six_bins(self):
        img = np.array([[[0, 0, 0], [255, 255, 255]]], dtype=np.uint8)
        desc = color_histogram(img, bins_per_channel=32)
        nz = np.nonzero(desc.values)[0]
        np.testing.assert_array_equal(nz, [0, 31, 32, 63, 64, 95])
        np.testing.assert_allclose(desc.values[nz], 1 / 6)

    def test_uniform_image_one_bin_per_channel(self):
        img = np.full((6, 6, 3), 128, dtype=np.uint8)
        desc = color_histogram(img, bins_per_channel=32)
        idx = 128 // 8
        for c in range(3):
            assert desc.values[c * 32 + idx] == pytest.approx(1 / 3)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), bins=st.sampled_from([8, 16, 32, 64]))
    def test_descriptor_sums_to_one(self, seed, bins):
        rng = np.random.default_rng(seed)
        img = rng.integers(0, 256, (9, 7, 3), dtype=np.uint8)
        desc = color_histogram(img, bins_per_channel=bins)
        assert desc.values.sum() == pytest.approx(1.0)
        assert (desc.values >= 0).all()

    def test_mask_restricts_pixels(self):
        img = np.zeros((2, 2, 3), dtype=np.uint8)
        img[0, 0] = 255
        mask = np.zeros((2, 2), dtype=np.uint8)
        mask[0, 0] = 255
        desc = color_histogram(img, mask=mask, bins_per_channel=32)
        nz = np.nonzero(desc.values)[0]
        np.testing.assert_array_equal(nz, [31, 63, 95])

    def test_empty_mask_rejected(self):
        with pytest.raises(EmptySelectionError):
            color_histogram(
                np.zeros((2, 2, 3), dtype=np.uint8), mask=np.zeros((2, 2), dtype=np.uint8)
            )

    def test_bad_bin_count_rejected(self):
        with pytest.raises(ValueError):
            color_histogram(np.zeros((2, 2, 3), dtype=np.uint8), bins_per_channel=10)

    def test_grayscale_rejected(self):
        with pytest.raises(DimensionMismatchError):
            color_histogram(np.zeros((2, 2), dtype=np.uint8))
