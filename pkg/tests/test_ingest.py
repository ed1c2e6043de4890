import numpy as np
import pytest
from hypothesis import given, strategies as st

from fabmatch.errors import BadMagicError, FileFormatError, TruncatedFileError
from fabmatch.ingest import (
    FrozenBackbone,
    PixelImage,
    box_downsample,
    featurize,
    gamma_correct,
    parse_pnm,
    permute_channels,
    select_press_frame,
    serialize_pnm,
)


def make_image(width, height, channels, max_value, seed=0):
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, max_value + 1, size=(height, width, channels)).astype(np.uint16)
    return PixelImage(width, height, channels, max_value, pixels)


class TestParse:
    def test_p6_tiny_color(self):
        data = b"P6 2 1 255\n" + bytes([255, 0, 0, 0, 255, 0])
        img = parse_pnm(data)
        assert (img.width, img.height, img.channels, img.max_value) == (2, 1, 3, 255)
        assert tuple(img.pixels[0, 0]) == (255, 0, 0)
        assert tuple(img.pixels[0, 1]) == (0, 255, 0)

    def test_unsupported_magic(self):
        with pytest.raises(BadMagicError):
            parse_pnm(b"P7 1 1 255\n\x00")

    def test_sixteen_bit_big_endian(self):
        img = parse_pnm(b"P5 1 1 65535\n\x01\x00")
        assert img.pixels[0, 0, 0] == 256

    def test_truncated_payload(self):
        with pytest.raises(TruncatedFileError):
            parse_pnm(b"P5 2 2 255\n\x00\x00")

    def test_bad_maxval(self):
        with pytest.raises(FileFormatError):
            parse_pnm(b"P5 1 1 70000\n\x00\x00")
        with pytest.raises(FileFormatError):
            parse_pnm(b"P5 1 1 0\n\x00")

    def test_header_comments(self):
        data = b"P5\n# a comment\n2 1\n# another\n255\n\x07\x09"
        img = parse_pnm(data)
        assert img.pixels[0, 0, 0] == 7 and img.pixels[0, 1, 0] == 9

    def test_single_whitespace_then_raster(self):
        # first raster byte 0x20 (space) must be read as a sample, not skipped
        img = parse_pnm(b"P5 1 2 255\n\x20\x21")
        assert img.pixels[0, 0, 0] == 0x20

    @given(
        width=st.integers(1, 5),
        height=st.integers(1, 5),
        channels=st.sampled_from([1, 3]),
        max_value=st.sampled_from([255, 65535]),
        seed=st.integers(0, 1000),
    )
    def test_round_trip(self, width, height, channels, max_value, seed):
        img = make_image(width, height, channels, max_value, seed)
        back = parse_pnm(serialize_pnm(img))
        assert back.width == img.width and back.height == img.height
        assert back.channels == img.channels and back.max_value == img.max_value
        assert np.array_equal(back.pixels, img.pixels)


class TestGamma:
    def test_identity(self):
        img = make_image(4, 3, 3, 255)
        out = gamma_correct(img, 1.0)
        assert np.array_equal(out.pixels, img.pixels)

    def test_reference_values(self):
        img = PixelImage(1, 1, 1, 255, np.array([[[64]]], dtype=np.uint16))
        assert gamma_correct(img, 2.0).pixels[0, 0, 0] == 16
        assert gamma_correct(img, 0.5).pixels[0, 0, 0] == 128

    def test_out_of_range_rejected(self):
        img = make_image(2, 2, 1, 255)
        for gamma in (0.4, 2.1):
            with pytest.raises(ValueError):
                gamma_correct(img, gamma)

    def test_preserves_shape_and_maxval(self):
        img = make_image(5, 2, 3, 65535, seed=3)
        out = gamma_correct(img, 1.7)
        assert out.pixels.shape == img.pixels.shape
        assert out.max_value == img.max_value
        assert int(out.pixels.max()) <= out.max_value


class TestPermute:
    def test_identity(self):
        img = make_image(3, 2, 3, 255, seed=1)
        assert np.array_equal(permute_channels(img, (0, 1, 2)).pixels, img.pixels)

    def test_inverse_round_trip(self):
        img = make_image(3, 2, 3, 255, seed=2)
        perm = (2, 0, 1)
        inverse = (1, 2, 0)
        back = permute_channels(permute_channels(img, perm), inverse)
        assert np.array_equal(back.pixels, img.pixels)

    def test_reference_pixel(self):
        img = PixelImage(1, 1, 3, 255, np.array([[[10, 20, 30]]], dtype=np.uint16))
        out = permute_channels(img, (2, 0, 1))
        assert tuple(out.pixels[0, 0]) == (30, 10, 20)

    def test_grayscale_rejected(self):
        with pytest.raises(ValueError):
            permute_channels(make_image(2, 2, 1, 255), (0, 1, 2))

    def test_invalid_permutation_rejected(self):
        with pytest.raises(ValueError):
            permute_channels(make_image(2, 2, 3, 255), (0, 1, 1))


class TestDownsample:
    def test_constant_image(self):
        img = PixelImage(10, 7, 1, 255, np.full((7, 10, 1), 100, dtype=np.uint16))
        out = box_downsample(img, 4)
        np.testing.assert_allclose(out, 100.0 / 255.0, rtol=1e-12)

    def test_exact_two_by_two_means(self):
        pixels = np.arange(16, dtype=np.uint16).reshape(4, 4, 1)
        img = PixelImage(4, 4, 1, 255, pixels)
        out = box_downsample(img, 2)
        expect = np.array([[pixels[:2, :2].mean(), pixels[:2, 2:].mean()],
                           [pixels[2:, :2].mean(), pixels[2:, 2:].mean()]]) / 255.0
        np.testing.assert_allclose(out[:, :, 0], expect, rtol=1e-12)

    def test_upsampling_small_image(self):
        pixels = np.array([[[0], [255]], [[255], [0]]], dtype=np.uint16)
        img = PixelImage(2, 2, 1, 255, pixels)
        out = box_downsample(img, 4)
        assert out.shape == (4, 4, 1)
        np.testing.assert_allclose(out[0, 0, 0], 0.0, atol=1e-12)
        np.testing.assert_allclose(out[0, 3, 0], 1.0, atol=1e-12)


class TestFeaturize:
    def test_zero_image_gives_zero_features(self):
        img = PixelImage(8, 8, 1, 255, np.zeros((8, 8, 1), dtype=np.uint16))
        backbone = FrozenBackbone(0, channels=1)
        assert np.all(featurize(img, backbone) == 0.0)

    def test_deterministic(self):
        img = make_image(20, 16, 3, 255, seed=4)
        a = featurize(img, FrozenBackbone(5, channels=3))
        b = featurize(img, FrozenBackbone(5, channels=3))
        assert np.array_equal(a, b)

    def test_single_pixel_difference_changes_features(self):
        img = make_image(16, 16, 1, 255, seed=6)
        other_pixels = img.pixels.copy()
        other_pixels[3, 3, 0] = (int(other_pixels[3, 3, 0]) + 128) % 256
        other = PixelImage(16, 16, 1, 255, other_pixels)
        backbone = FrozenBackbone(7, channels=1)
        assert not np.array_equal(featurize(img, backbone), featurize(other, backbone))

    def test_channel_mismatch_rejected(self):
        img = make_image(8, 8, 3, 255)
        with pytest.raises(ValueError):
            featurize(img, FrozenBackbone(0, channels=1))

    def test_lipschitz_bound(self):
        backbone = FrozenBackbone(1, channels=1)
        bound = backbone.operator_norm()
        for seed in range(5):
            a = make_image(32, 24, 1, 255, seed=seed)
            b = make_image(32, 24, 1, 255, seed=seed + 100)
            fa, fb = featurize(a, backbone), featurize(b, backbone)
            da = box_downsample(a, 64).reshape(-1)
            db = box_downsample(b, 64).reshape(-1)
            assert np.linalg.norm(fa - fb) <= bound * np.linalg.norm(da - db) + 1e-9


class TestPressFrame:
    def test_selects_deepest_press(self):
        base = np.full((2, 2, 1), 100, dtype=np.uint16)
        frames = [
            PixelImage(2, 2, 1, 255, base),
            PixelImage(2, 2, 1, 255, base + 20),
            PixelImage(2, 2, 1, 255, base + 90),
            PixelImage(2, 2, 1, 255, base + 40),
        ]
        assert select_press_frame(frames) == 2

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            select_press_frame([])
