import numpy as np
import pytest

from sparseviews.errors import ConfigurationError, InvalidInputError
from sparseviews.features import (
    FeatureParams,
    cell_histograms,
    extract_color_histogram,
    extract_feature_vector,
    extract_hog,
    extract_lbp,
    lbp_codes,
    load_image,
    read_feature_table,
    save_image,
    write_feature_table,
)
from sparseviews.layout import FeatureVector, ModalityLayout, normalize_blocks

# index of the all-zeros and all-ones codes among the 58 ascending uniform codes
ZERO_BIN = 0
ONES_BIN = 57


def uniform_codes():
    # independent enumeration: circular 0/1 transitions counted bit by bit
    out = []
    for c in range(256):
        bits = [(c >> i) & 1 for i in range(8)]
        if sum(bits[i] != bits[(i + 1) % 8] for i in range(8)) <= 2:
            out.append(c)
    return out


class TestLayout:
    def test_sum_of_lengths(self):
        lay = ModalityLayout.from_pairs([("a", 3), ("b", 5), ("c", 1)])
        assert lay.d == 9 and lay.m == 3
        assert [s.start for s in lay.slices()] == [0, 3, 8]

    @pytest.mark.parametrize("pairs", [[], [("a", 1), ("a", 2)], [("a", 0)]])
    def test_invalid(self, pairs):
        with pytest.raises(InvalidInputError):
            ModalityLayout.from_pairs(pairs)

    def test_string_round_trip(self):
        lay = ModalityLayout.from_pairs([("color", 64), ("hog", 1764), ("lbp", 59)])
        assert ModalityLayout.from_string(lay.to_string()) == lay

    def test_feature_vector_checks(self):
        lay = ModalityLayout.uniform(2, 2)
        with pytest.raises(InvalidInputError):
            FeatureVector(np.ones(3), lay)
        with pytest.raises(InvalidInputError):
            FeatureVector(np.array([1.0, np.nan, 0, 0]), lay)
        fv = FeatureVector(np.arange(4.0), lay)
        np.testing.assert_array_equal(fv.block("block1"), [2.0, 3.0])

    def test_normalize_blocks_leaves_zero_block(self):
        lay = ModalityLayout.uniform(2, 2)
        out = normalize_blocks(np.array([3.0, 4.0, 0.0, 0.0]), lay)
        np.testing.assert_allclose(out, [0.6, 0.8, 0.0, 0.0])


class TestColorHistogram:
    def test_pure_red(self):
        img = np.zeros((5, 7, 3), np.uint8)
        img[..., 0] = 255
        h = extract_color_histogram(img, 4)
        expected = np.zeros(64)
        expected[(3 * 4 + 0) * 4 + 0] = 1.0
        np.testing.assert_array_equal(h, expected)

    def test_black_white_halves(self):
        img = np.zeros((4, 4, 3), np.uint8)
        img[:, 2:] = 255
        h = extract_color_histogram(img, 2)
        np.testing.assert_array_equal(h, [0.5, 0, 0, 0, 0, 0, 0, 0.5])

    def test_gray_treated_as_rgb(self, rng):
        g = rng.integers(0, 256, (9, 9), dtype=np.uint8)
        np.testing.assert_array_equal(
            extract_color_histogram(g, 4), extract_color_histogram(np.dstack([g, g, g]), 4)
        )

    def test_sum_and_rotation_invariance(self, rng):
        img = rng.integers(0, 256, (13, 17, 3), dtype=np.uint8)
        h = extract_color_histogram(img, 4)
        assert h.min() >= 0
        assert abs(h.sum() - 1) < 1e-9
        np.testing.assert_array_equal(h, extract_color_histogram(np.rot90(img), 4))

    def test_zero_area(self):
        with pytest.raises(InvalidInputError):
            extract_color_histogram(np.zeros((0, 4, 3), np.uint8))


class TestHog:
    def test_length(self):
        params = FeatureParams(resize_edge=64)
        assert params.hog_length == 7 * 7 * 4 * 9
        img = np.random.default_rng(0).integers(0, 256, (64, 64), dtype=np.uint8)
        assert extract_hog(img, params).shape == (1764,)

    def test_constant_image(self):
        h = extract_hog(np.full((32, 32), 77, np.uint8), FeatureParams(resize_edge=32))
        assert np.all(h == 0)

    def test_vertical_step_edge(self):
        img = np.zeros((16, 16), np.uint8)
        img[:, 8:] = 255
        hist = cell_histograms(img.astype(float), 4, 9)
        # gx = 255 in pixel columns 7 and 8 (cells 1 and 2), gy = 0: angle 0 -> bin 0
        for r in range(4):
            for c in range(4):
                if c in (1, 2):
                    assert hist[r, c, 0] == pytest.approx(4 * 255.0)
                    assert np.all(hist[r, c, 1:] == 0)
                else:
                    assert np.all(hist[r, c] == 0)

    def test_block_normalization(self, rng):
        params = FeatureParams(resize_edge=32)
        h = extract_hog(rng.integers(0, 256, (32, 32), dtype=np.uint8), params)
        blocks = h.reshape(-1, params.hog_block**2 * params.hog_bins)
        np.testing.assert_allclose(np.linalg.norm(blocks, axis=1), 1.0, atol=1e-9)

    def test_too_small(self):
        with pytest.raises(InvalidInputError):
            extract_hog(np.zeros((4, 4), np.uint8), FeatureParams(resize_edge=32))

    def test_params_validation(self):
        with pytest.raises(ConfigurationError):
            FeatureParams(resize_edge=30, hog_cell=8)
        with pytest.raises(ConfigurationError):
            FeatureParams(color_bins=1)


class TestLbp:
    def test_uniform_table_matches_enumeration(self):
        codes = uniform_codes()
        assert len(codes) == 58
        assert codes[ZERO_BIN] == 0 and codes[ONES_BIN] == 255

    def test_constant_image(self):
        h = extract_lbp(np.full((6, 6), 9, np.uint8))
        expected = np.zeros(59)
        expected[ONES_BIN] = 1.0
        np.testing.assert_array_equal(h, expected)

    def test_center_above_neighbours(self):
        img = np.full((3, 3), 50, np.uint8)
        img[1, 1] = 100
        h = extract_lbp(img)
        assert h[ZERO_BIN] == 1.0 and h.sum() == 1.0

    def test_bit_order(self):
        img = np.zeros((3, 3), np.uint8)
        img[0, 0] = 10  # top-left neighbour is bit 0
        img[1, 1] = 5
        assert lbp_codes(img)[0, 0] == 1
        img[1, 0] = 10  # left neighbour is bit 7
        assert lbp_codes(img)[0, 0] == 1 | 128

    def test_non_uniform_bin(self):
        img = np.zeros((3, 3), np.uint8)
        img[1, 1] = 5
        img[0, 0] = img[0, 2] = 10  # bits 0 and 2: four transitions
        assert extract_lbp(img)[58] == 1.0

    def test_sum(self, rng):
        h = extract_lbp(rng.integers(0, 256, (20, 11), dtype=np.uint8))
        assert abs(h.sum() - 1) < 1e-9 and h.min() >= 0

    def test_too_small(self):
        with pytest.raises(InvalidInputError):
            extract_lbp(np.zeros((2, 5), np.uint8))


class TestFeatureVector:
    def test_blocks_unit_norm(self, rng, small_params):
        img = rng.integers(0, 256, (40, 50, 3), dtype=np.uint8)
        fv = extract_feature_vector(img, small_params)
        assert fv.values.shape == (small_params.layout().d,)
        for s in fv.layout.slices():
            assert abs(np.linalg.norm(fv.values[s]) - 1) < 1e-9

    def test_constant_image(self, small_params):
        fv = extract_feature_vector(np.full((32, 32, 3), 100, np.uint8), small_params)
        assert np.all(fv.block("hog") == 0)
        assert np.count_nonzero(fv.block("color")) == 1
        assert np.count_nonzero(fv.block("lbp")) == 1

    def test_deterministic(self, rng, small_params):
        img = rng.integers(0, 256, (33, 33), dtype=np.uint8)
        a = extract_feature_vector(img, small_params).values
        b = extract_feature_vector(img.copy(), small_params).values
        assert a.tobytes() == b.tobytes()

    def test_layout_mismatch(self, small_params):
        with pytest.raises(ConfigurationError):
            extract_feature_vector(np.zeros((32, 32), np.uint8), small_params, FeatureParams().layout())

    def test_png_and_pgm_round_trip(self, tmp_path, rng, small_params):
        img = rng.integers(0, 256, (32, 32), dtype=np.uint8)
        for name in ("a.png", "a.pgm"):
            save_image(tmp_path / name, img)
            np.testing.assert_array_equal(load_image(tmp_path / name), img)

    def test_unreadable_image_names_path(self, tmp_path):
        bad = tmp_path / "broken.png"
        bad.write_bytes(b"not an image")
        with pytest.raises(OSError, match="broken.png"):
            load_image(bad)


def test_feature_table_round_trip(tmp_path, rng):
    lay = ModalityLayout.uniform(2, 3)
    M = rng.standard_normal((4, 6))
    write_feature_table(tmp_path / "t.csv", ["a", "b,c", "d", "e"], M, lay)
    ids, M2, lay2 = read_feature_table(tmp_path / "t.csv")
    assert ids == ["a", "b,c", "d", "e"] and lay2 == lay
    np.testing.assert_array_equal(M, M2)
