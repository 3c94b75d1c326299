import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from dualsam import codec

masks = st.integers(1, 16).flatmap(
    lambda h: st.integers(1, 16).flatmap(
        lambda w: arrays(np.uint8, (h, w), elements=st.integers(0, 1))))


# ---------------------------------------------------------------- offsets

def test_offset_table_entries():
    off = codec.offsets()
    assert off[0].tolist() == [-2, 0] and off[7].tolist() == [2, 0]
    assert [tuple(o) for o in off] == oracles.CRISS_CROSS


def test_offset_reciprocity():
    off = codec.offsets()
    for c in range(8):
        assert (off[codec.reciprocal(c)] == -off[c]).all()


def test_offset_table_is_union_of_neighbor_sets():
    d1, d2 = oracles.neighbor_sets()
    assert len({tuple(o) for o in codec.offsets()}) == 8
    assert {tuple(o) for o in codec.offsets()} == set(d1) | set(d2)


def test_offsets_copy_is_independent():
    off = codec.offsets()
    off[0] = (9, 9)
    assert codec.offsets()[0].tolist() == [-2, 0]


# ----------------------------------------------------------------- encode

def test_encode_lone_pixel():
    m = np.zeros((5, 5), np.uint8)
    m[2, 2] = 1
    assert not codec.encode(m).any()


def test_encode_row_center():
    m = np.ones((1, 5), np.uint8)
    lab = codec.encode(m)
    assert lab[0, 2].tolist() == np.array(oracles.encode(m.tolist()))[0, 2].tolist()
    # horizontal channels: offsets with du != 0
    assert lab[0, 2].tolist() == [1, 1, 0, 0, 0, 0, 1, 1]


def test_encode_full_interior():
    lab = codec.encode(np.ones((7, 8), np.uint8))
    assert lab[2:-2, 2:-2].all()
    assert not lab[0, 0, 0] and not lab[0, 0, 3]


@given(masks)
def test_encode_matches_oracle(m):
    assert codec.encode(m).tolist() == oracles.encode(m.tolist())


@given(masks)
def test_encode_reciprocity(m):
    lab = codec.encode(m)
    h, w = m.shape
    for c, (du, dv) in enumerate(oracles.CRISS_CROSS):
        for y in range(h):
            for x in range(w):
                u, v = x + du, y + dv
                if 0 <= u < w and 0 <= v < h:
                    assert lab[y, x, c] == lab[v, u, 7 - c]


def test_encode_rejects_non_binary():
    with pytest.raises(ValueError):
        codec.encode(np.array([[0, 2]]))


def test_encode_accepts_bool():
    assert codec.encode(np.ones((1, 3), bool)).dtype == np.uint8


# -------------------------------------------------------------- threshold

def test_threshold_strict():
    assert codec.threshold(np.array([0.5]), 0.5).tolist() == [0]
    assert codec.threshold(np.array([0.500001]), 0.5).tolist() == [1]
    assert not codec.threshold(np.zeros((2, 2, 8)), 0.5).any()


@pytest.mark.parametrize("xi", [0.0, 1.0, -0.1, 2.0])
def test_threshold_range(xi):
    with pytest.raises(ValueError):
        codec.threshold(np.zeros(3), xi)


# ----------------------------------------------------------------- decode

def test_decode_zero_label():
    assert not codec.decode(np.zeros((4, 4, 8), np.uint8)).any()


def test_decode_block_round_trip():
    m = np.zeros((7, 7), np.uint8)
    m[2:5, 2:5] = 1
    assert np.array_equal(codec.decode(codec.encode(m)), m)
    assert codec.decode(codec.encode(m)).tolist() == oracles.decode(oracles.encode(m.tolist()))


def test_decode_unconfirmed_link():
    lab = np.zeros((3, 3, 8), np.uint8)
    lab[1, 1, 4] = 1  # asserts (0, +1) without the reciprocal assertion
    assert not codec.decode(lab).any()


def test_decode_confirmed_link_sets_both_ends():
    lab = np.zeros((3, 3, 8), np.uint8)
    lab[1, 1, 4] = 1
    lab[2, 1, 3] = 1
    out = codec.decode(lab)
    assert out.tolist() == [[0, 0, 0], [0, 1, 0], [0, 1, 0]]


def test_decode_ignores_out_of_bounds():
    lab = np.ones((1, 1, 8), np.uint8)
    assert not codec.decode(lab).any()


@given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.integers(1, 12))
def test_decode_matches_oracle_on_noise(seed, h, w):
    lab = (np.random.default_rng(seed).random((h, w, 8)) < 0.4).astype(np.uint8)
    assert codec.decode(lab).tolist() == oracles.decode(lab.tolist())


@given(masks)
def test_round_trip_strips_isolated(m):
    out = codec.decode(codec.encode(m))
    assert out.tolist() == oracles.strip_isolated(m.tolist())
    assert np.array_equal(out, m & (1 - codec.isolated(m)))


@given(st.integers(0, 2**32 - 1))
def test_decode_monotone(seed):
    r = np.random.default_rng(seed)
    lab = (r.random((8, 8, 8)) < 0.3).astype(np.uint8)
    extra = lab | (r.random((8, 8, 8)) < 0.2).astype(np.uint8)
    assert (codec.decode(extra) >= codec.decode(lab)).all()


@given(st.integers(0, 2**32 - 1))
def test_decode_subset_of_asserting_pixels(seed):
    lab = (np.random.default_rng(seed).random((9, 7, 8)) < 0.3).astype(np.uint8)
    assert not (codec.decode(lab) & (lab.max(axis=2) == 0)).any()


# ---------------------------------------------------------------- pooling

def test_downsample_identity(rng):
    m = (rng.random((4, 6)) < 0.5).astype(np.uint8)
    assert np.array_equal(codec.downsample_mask(m, 1), m)


def test_downsample_or_semantics():
    m = np.zeros((2, 2), np.uint8)
    m[1, 0] = 1
    assert codec.downsample_mask(m, 2).tolist() == [[1]]


def test_downsample_checkerboard():
    m = (np.indices((4, 4)).sum(axis=0) % 2).astype(np.uint8)
    assert codec.downsample_mask(m, 2).tolist() == oracles.or_pool(m.tolist(), 2) == [[1, 1], [1, 1]]


@pytest.mark.parametrize("shape,factor", [((6, 4), 4), ((4, 4), 3), ((4, 4), 0)])
def test_downsample_errors(shape, factor):
    with pytest.raises(ValueError):
        codec.downsample_mask(np.zeros(shape, np.uint8), factor)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 4, 8]))
def test_downsample_matches_oracle(seed, f):
    m = (np.random.default_rng(seed).random((16, 8)) < 0.1).astype(np.uint8)
    assert codec.downsample_mask(m, f).tolist() == oracles.or_pool(m.tolist(), f)


# ------------------------------------------------------------------ files

def test_label_file_layout():
    lab = np.zeros((2, 3, 8), np.uint8)
    lab[0, 1, 5] = 1
    data = codec.save_label(lab)
    assert data.startswith(b"C3PL\n2 3 8\n")
    body = data[len(b"C3PL\n2 3 8\n"):]
    assert len(body) == 48 and body[(0 * 3 + 1) * 8 + 5] == 1 and sum(body) == 1
    assert np.array_equal(codec.load_label(data), lab)


def test_map_file_layout(rng):
    p = rng.random((2, 2, 8))
    data = codec.save_map(p)
    assert data.startswith(b"C3PF\n2 2 8\n")
    assert np.frombuffer(data[len(b"C3PF\n2 2 8\n"):], "<f8")[3] == p[0, 0, 3]
    assert np.array_equal(codec.load_map(data), p)


@pytest.mark.parametrize("data", [
    b"C3PX\n1 1 8\n" + bytes(8),
    b"C3PL\n1 1 4\n" + bytes(4),
    b"C3PL\n1 1 8\n" + bytes(7),
    b"C3PL\n1 1 8\n" + bytes([2] + [0] * 7),
    b"C3PL\n1 one 8\n" + bytes(8),
])
def test_label_file_errors(data):
    with pytest.raises(codec.CodecFormatError):
        codec.load_label(data)
