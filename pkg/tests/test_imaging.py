import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from dualsam import imaging
from dualsam.imaging import (DegenerateStatsError, GrayStats, HeaderError, MaxvalError, RawImage,
                             TruncatedError, UnsupportedMagicError, gamma_coefficient, gamma_correct,
                             load_pnm, resize_bilinear, save_pnm, to_gray)


# ---------------------------------------------------------------- PNM I/O

def test_minimal_pgm():
    img = load_pnm(b"P5\n1 1\n255\n\x7f")
    assert (img.width, img.height, img.channels) == (1, 1, 1)
    assert img.pixels[0, 0, 0] == 127


def test_comments_in_header():
    img = load_pnm(b"P6\n# made by hand\n2 1\n# maxval next\n255\n" + bytes(range(6)))
    assert img.pixels.reshape(-1).tolist() == list(range(6))


def test_save_normalizes_header():
    raw = b"P5  # c\n 2   2\n255\n" + bytes([1, 2, 3, 4])
    assert save_pnm(load_pnm(raw)) == b"P5\n2 2\n255\n" + bytes([1, 2, 3, 4])


@pytest.mark.parametrize("data,err", [
    (b"P4\n1 1\n255\n\x00", UnsupportedMagicError),
    (b"P2\n1 1\n255\n0", UnsupportedMagicError),
    (b"P5\n1 1\n65535\n\x00\x00", MaxvalError),
    (b"P5\n2 2\n255\n\x00", TruncatedError),
    (b"P6\n1 1\n255\n\x00\x00", TruncatedError),
    (b"P5\n1 x\n255\n\x00", HeaderError),
    (b"P5\n1 1", HeaderError),
])
def test_parse_errors(data, err):
    with pytest.raises(err):
        load_pnm(data)


def test_parse_errors_are_distinct():
    kinds = {UnsupportedMagicError, MaxvalError, TruncatedError}
    assert len(kinds) == 3 and all(issubclass(k, imaging.PNMError) for k in kinds)


@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]), st.integers(0, 2**32 - 1))
def test_pnm_round_trip(w, h, c, seed):
    px = np.random.default_rng(seed).integers(0, 256, (h, w, c), dtype=np.uint8)
    img = RawImage(w, h, c, px)
    data = save_pnm(img)
    back = load_pnm(data)
    assert np.array_equal(back.pixels, px)
    assert save_pnm(back) == data


def test_file_round_trip(tmp_path, rng):
    img = RawImage.from_array(rng.integers(0, 256, (3, 4, 3), dtype=np.uint8))
    imaging.write_pnm(tmp_path / "x.ppm", img)
    assert np.array_equal(imaging.read_pnm(tmp_path / "x.ppm").pixels, img.pixels)


def test_rawimage_validates():
    with pytest.raises(ValueError):
        RawImage(2, 2, 2, np.zeros((2, 2, 2), np.uint8))
    with pytest.raises(ValueError):
        RawImage(2, 2, 1, np.zeros((2, 3, 1), np.uint8))


# ------------------------------------------------------------------- gray

def test_gray_uniform():
    gray, stats = to_gray(RawImage.from_array(np.full((2, 2, 3), 100, np.uint8)))
    assert gray.pixels.reshape(-1).tolist() == [100] * 4 and stats.mean_gray == pytest.approx(100)


def test_gray_red_pixel():
    gray, stats = to_gray(RawImage.from_array(np.array([[[255, 0, 0]]], np.uint8)))
    assert 0.299 * 255 == pytest.approx(76.245)
    assert gray.pixels[0, 0, 0] == 76 and stats.mean_gray == pytest.approx(76.245)


def test_gray_passthrough_single_channel(rng):
    img = RawImage.from_array(rng.integers(0, 256, (3, 3), dtype=np.uint8))
    gray, stats = to_gray(img)
    assert gray is img and stats.mean_gray == pytest.approx(img.pixels.mean())


# ------------------------------------------------------------------ gamma

def test_gamma_mid_gray_guard():
    img = np.full((3, 3, 3), 0.5)
    assert gamma_coefficient(127.5) == 0.0
    assert np.array_equal(gamma_correct(img, GrayStats(127.5)), img)


def test_gamma_quarter_as_written():
    # gamma = log10(2); 0.25 ** (1 / log10 2) = 0.25 ** log2(10) = 10 ** -2
    img = np.full((2, 2, 3), 0.25)
    g = gamma_coefficient(63.75)
    assert g == pytest.approx(math.log10(2), abs=1e-15)
    assert np.abs(gamma_correct(img, GrayStats(63.75)) - 0.01).max() < 1e-12


def test_gamma_quarter_standard():
    img = np.full((2, 2, 3), 0.25)
    assert gamma_coefficient(63.75, "standard-agc") == pytest.approx(0.5, abs=1e-15)
    out = gamma_correct(img, GrayStats(63.75), "standard-agc")
    assert np.abs(out - 0.5).max() < 1e-12


def test_gamma_standard_guard_at_mid_gray():
    img = np.full((2, 2, 1), 0.5)
    assert np.array_equal(gamma_correct(img, GrayStats(127.5), "standard-agc"), img)


@pytest.mark.parametrize("mean", [0.0, 255.0, -1.0])
def test_gamma_degenerate_stats(mean):
    with pytest.raises(DegenerateStatsError):
        gamma_correct(np.full((1, 1, 1), 0.5), GrayStats(mean))


def test_gamma_unknown_variant():
    with pytest.raises(ValueError):
        gamma_coefficient(100, "inverse")


def test_gamma_zero_pixels_clamped():
    img = np.array([[[0.0]], [[0.5]]])
    out = gamma_correct(img, GrayStats(63.75))
    assert out[0, 0, 0] == pytest.approx((1 / 255) ** (1 / math.log10(2)))


unit = st.floats(0.0, 1.0, allow_nan=False)


@pytest.mark.parametrize("variant", imaging.GAMMA_VARIANTS)
@given(a=unit, b=unit, mean=st.floats(0.5, 254.5))
def test_gamma_monotone_and_bounded(variant, a, b, mean):
    x = np.array([[[min(a, b)], [max(a, b)]]])
    out = gamma_correct(x, GrayStats(mean), variant)
    assert 0.0 <= out.min() and out.max() <= 1.0
    assert out[0, 0, 0] <= out[0, 1, 0]


# ----------------------------------------------------------------- resize

def test_resize_same_size(rng):
    img = rng.random((3, 4, 3))
    assert np.array_equal(resize_bilinear(img, 4, 3), img)


def test_resize_row():
    out = resize_bilinear(np.array([[0.0, 1.0]]), 4, 1)
    assert out[0].tolist() == oracles.lerp_1d([0.0, 1.0], 4) == [0.0, 0.25, 0.75, 1.0]


def test_resize_zero_target():
    with pytest.raises(ValueError):
        resize_bilinear(np.ones((2, 2)), 0, 2)


@given(st.floats(0, 1), st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.integers(1, 12))
def test_resize_constant_round_trip(v, w0, h0, w1, h1):
    img = np.full((h0, w0, 3), v)
    out = resize_bilinear(resize_bilinear(img, w1, h1), w0, h0)
    assert np.array_equal(out, img)


@given(arrays(np.float64, (3, 5), elements=st.floats(0, 1)), st.integers(1, 9))
def test_resize_matches_separable_oracle(img, new_w):
    out = resize_bilinear(img, new_w, 3)
    ref = [oracles.lerp_1d(row, new_w) for row in img.tolist()]
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)


def test_quantize_round_half_up():
    img = imaging.quantize(np.array([[0.0, 0.5 / 255, 1.0]]))
    assert img.pixels.reshape(-1).tolist() == [0, 1, 255]
