import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cephalo.core import LandmarkSet
from cephalo.errors import ConfigError, DataError, ParseError
from cephalo.heatmap import (
    HeatmapStack,
    decode,
    decode_to_native,
    encode,
    format_hmap,
    hmap_header,
    parse_hmap,
    read_hmap,
    write_hmap,
)


def test_encode_peak_and_offset_value():
    ch = encode(LandmarkSet([[3.0, 3.0]]), 8, 8, sigma=1.0).channels[0]
    assert ch[3, 3] == 1.0
    # one pixel up from the peak: exp(-1 / 2)
    assert ch[2, 3] == pytest.approx(0.60653, abs=5e-6)
    assert ch[2, 3] == pytest.approx(math.exp(-0.5), rel=1e-15)


def test_encode_invisible_channel_is_zero():
    ls = LandmarkSet([[1.0, 1.0], [np.nan, np.nan]], [True, False])
    stack = encode(ls, 5, 4)
    assert not stack.channels[1].any()
    out = decode(stack)
    assert list(out.visible) == [True, False]
    assert out.confidence[1] == 0.0


def test_encode_validation():
    with pytest.raises(ConfigError):
        encode(LandmarkSet([[1, 1]]), 0, 4)
    with pytest.raises(ConfigError):
        encode(LandmarkSet([[1, 1]]), 4, 4, sigma=0)


@given(st.integers(1, 62), st.integers(1, 46), st.sampled_from([1.0, 2.0, 3.0, 4.0]))
def test_on_grid_round_trip_exact(x, y, sigma):
    out = decode(encode(LandmarkSet([[x, y]]), 64, 48, sigma))
    assert tuple(out.points[0]) == (x, y)
    assert out.confidence[0] == 1.0


@given(st.floats(1, 62), st.floats(1, 46), st.floats(1.0, 4.0))
def test_sub_pixel_round_trip(x, y, sigma):
    out = decode(encode(LandmarkSet([[x, y]]), 64, 48, sigma))
    assert np.abs(out.points[0] - (x, y)).max() <= 0.75


def test_decode_ties_take_first_maximum():
    ch = np.zeros((1, 4, 5))
    ch[0, 1, 3] = ch[0, 2, 1] = 0.5
    out = decode(HeatmapStack(ch))
    assert tuple(out.points[0]) == (3.0, 1.0)


def test_decode_nudges_toward_larger_neighbour():
    ch = np.zeros((1, 5, 5))
    ch[0, 2, 2] = 1.0
    ch[0, 2, 3] = 0.4
    ch[0, 1, 2] = 0.2
    out = decode(HeatmapStack(ch))
    assert tuple(out.points[0]) == (2.25, 1.75)


def test_decode_no_nudge_at_border():
    ch = np.zeros((1, 3, 3))
    ch[0, 0, 0] = 1.0
    ch[0, 0, 1] = 0.9
    assert tuple(decode(HeatmapStack(ch)).points[0]) == (0.0, 0.0)
    # interior along x, border along y
    ch = np.zeros((1, 3, 3))
    ch[0, 0, 1] = 1.0
    ch[0, 0, 2] = 0.9
    ch[0, 1, 1] = 0.9
    assert tuple(decode(HeatmapStack(ch)).points[0]) == (1.25, 0.0)


def test_decode_to_native_example():
    ch = np.zeros((1, 512, 512))
    ch[0, 256, 256] = 1.0
    out = decode_to_native(HeatmapStack(ch), 2304, 2880)
    assert tuple(out.points[0]) == (1152.0, 1440.0)


def test_decode_to_native_rejects_missing_extents():
    with pytest.raises(DataError):
        decode_to_native(HeatmapStack(np.ones((1, 2, 2))), None, 4)


def test_stack_validation():
    with pytest.raises(DataError):
        HeatmapStack(np.ones((2, 2)))
    with pytest.raises(DataError):
        HeatmapStack(np.full((1, 2, 2), np.nan))


@given(st.integers(1, 4), st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_hmap_round_trip(tmp_path_factory, k, h, w, seed):
    vals = np.random.default_rng(seed).random((k, h, w)).astype(np.float32).astype(np.float64)
    stack = HeatmapStack(vals, "img")
    p = tmp_path_factory.mktemp("hm") / "img.hmap"
    write_hmap(stack, p)
    back = read_hmap(p)
    assert back.image_id == "img"
    assert np.array_equal(back.channels, vals)
    assert hmap_header(p) == (k, h, w)


def test_hmap_header_layout():
    data = format_hmap(HeatmapStack(np.zeros((2, 3, 4))))
    assert data.startswith(b"HMAP 1 2 3 4 f32le\n")
    assert len(data) == len(b"HMAP 1 2 3 4 f32le\n") + 2 * 3 * 4 * 4


@pytest.mark.parametrize(
    "data,exc",
    [
        (b"HMAP 1 1 1 1 f32le\n" + bytes(3), DataError),
        (b"HMAP 2 1 1 1 f32le\n" + bytes(4), ParseError),
        (b"HMAP 1 1 1 1 f64le\n" + bytes(8), ParseError),
        (b"JUNK\n", ParseError),
        (b"HMAP 1 x 1 1 f32le\n", ParseError),
    ],
)
def test_hmap_malformed(data, exc):
    with pytest.raises(exc):
        parse_hmap(data)
