import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cephalo.core import ImageMeta, ImageRecord
from cephalo.errors import ParseError, SizeMismatchError, UnsupportedFormatError
from cephalo.mha import (
    MET_TYPES,
    MhaHeader,
    format_mha,
    header_for,
    load_slice,
    pack_to_common_canvas,
    parse_mha,
    read_mha,
    record_from_mha,
    write_mha,
    write_packed,
)


def _header_text(data: bytes) -> str:
    return data[: data.index(b"ElementDataFile = LOCAL\n") + 24].decode()


def test_uint8_2x2_decode():
    raw = (
        b"ObjectType = Image\nNDims = 2\nDimSize = 2 2\nElementType = MET_UCHAR\n"
        b"ElementSpacing = 1 1\nElementDataFile = LOCAL\n" + bytes([0, 1, 2, 3])
    )
    header, arr = parse_mha(raw)
    assert header.dim_size == (2, 2)
    assert arr.dtype == np.uint8
    assert arr.ravel().tolist() == [0, 1, 2, 3]


def test_header_lines():
    header = header_for(np.zeros((3, 5), np.uint8), (0.1, 0.1))
    text = _header_text(format_mha(header, np.zeros((3, 5), np.uint8)))
    assert "ElementSpacing = 0.1 0.1\n" in text
    assert "ElementType = MET_UCHAR\n" in text
    assert "DimSize = 5 3\n" in text


def test_integral_spacing_has_no_trailing_zero():
    text = _header_text(format_mha(header_for(np.zeros((2, 2), np.float32)), np.zeros((2, 2), np.float32)))
    assert "ElementSpacing = 1 1\n" in text


def test_payload_size_mismatch():
    raw = (
        b"NDims = 2\nDimSize = 10 10\nElementType = MET_UCHAR\nElementSpacing = 1 1\n"
        b"ElementDataFile = LOCAL\n" + bytes(50)
    )
    with pytest.raises(SizeMismatchError):
        parse_mha(raw)


@pytest.mark.parametrize(
    "line,exc",
    [
        (b"ElementType = MET_DOUBLE\n", UnsupportedFormatError),
        (b"CompressedData = True\n", UnsupportedFormatError),
        (b"BinaryDataByteOrderMSB = True\n", UnsupportedFormatError),
        (b"ElementNumberOfChannels = 3\n", UnsupportedFormatError),
    ],
)
def test_unsupported_features(line, exc):
    raw = b"NDims = 2\nDimSize = 1 1\nElementType = MET_UCHAR\nElementSpacing = 1 1\n"
    raw = raw.replace(b"ElementType = MET_UCHAR\n", b"") if b"ElementType" in line else raw
    with pytest.raises(exc):
        parse_mha(raw + line + b"ElementDataFile = LOCAL\n" + bytes(1))


def test_external_data_file_rejected():
    raw = b"NDims = 2\nDimSize = 1 1\nElementType = MET_UCHAR\nElementSpacing = 1 1\nElementDataFile = img.raw\n"
    with pytest.raises(UnsupportedFormatError):
        parse_mha(raw)


def test_malformed_header_reports_path(tmp_path):
    p = tmp_path / "bad.mha"
    p.write_bytes(b"NDims 2\nElementDataFile = LOCAL\n")
    with pytest.raises(ParseError) as info:
        read_mha(p)
    assert info.value.line == 1 and str(p) in str(info.value)


@pytest.mark.parametrize("dtype", sorted(MET_TYPES.values()))
@given(data=st.data())
def test_write_read_bit_exact(tmp_path_factory, dtype, data):
    shape = data.draw(st.sampled_from([(3, 4), (1, 1), (2, 3, 5)]))
    arr = data.draw(hnp.arrays(np.dtype(dtype), shape, elements={"allow_nan": False} if dtype == "float32" else None))
    spacing = tuple(data.draw(st.sampled_from([0.1, 0.125, 0.096, 1.0])) for _ in shape)
    header = header_for(arr, spacing)
    p = tmp_path_factory.mktemp("mha") / "img.mha"
    write_mha(header, arr, p)
    h2, back = read_mha(p)
    assert h2 == header
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()
    assert p.read_bytes() == format_mha(h2, back)


def _rec(w, h, fill=1.0):
    return ImageRecord(ImageMeta(f"r{w}x{h}", 0.1, w, h), np.full((h, w), fill))


def test_pack_small_canvas():
    stack, offsets = pack_to_common_canvas([_rec(4, 4), _rec(2, 2, 0.5)])
    assert stack.shape == (2, 4, 4)
    assert offsets == [(0, 0), (0, 0)]
    assert np.all(stack[1, :2, :2] == 0.5)
    assert np.all(stack[1, 2:, :] == 0) and np.all(stack[1, :, 2:] == 0)


def test_pack_single_image_unchanged():
    r = _rec(3, 5, 0.25)
    stack, _ = pack_to_common_canvas([r])
    assert np.array_equal(stack[0], r.pixels)


def test_pack_native_institution_extents():
    # widths x heights of the three contributing sites
    recs = [
        ImageRecord(ImageMeta(n, s, w, h), np.zeros((h, w), np.float32))
        for n, s, w, h in [("a", 0.1, 2880, 2304), ("b", 0.125, 2089, 1937), ("c", 0.096, 1935, 2400)]
    ]
    stack, _ = pack_to_common_canvas(recs)
    assert stack.shape[1:] == (2400, 2880)


def test_packed_file_slices_back(tmp_path):
    recs = [_rec(6, 4, 0.25), _rec(3, 7, 0.75)]
    write_packed(recs, tmp_path / "all.mha")
    header, arr = read_mha(tmp_path / "all.mha")
    assert header.dim_size == (6, 7, 2)
    for i, r in enumerate(recs):
        assert np.array_equal(load_slice(arr, i, r.meta.width, r.meta.height), r.pixels.astype(np.float32))


def test_record_from_mha_uses_spacing(tmp_path):
    arr = np.arange(12, dtype=np.uint16).reshape(3, 4)
    write_mha(header_for(arr, (0.125, 0.125)), arr, tmp_path / "x.mha")
    rec = record_from_mha(tmp_path / "x.mha")
    assert rec.meta.spacing_mm_per_px == 0.125 and rec.meta.institution == "B"
    assert (rec.meta.width, rec.meta.height) == (4, 3)


def test_header_validation():
    with pytest.raises(UnsupportedFormatError):
        MhaHeader(2, (2, 2), "float64", (1, 1))
    with pytest.raises(UnsupportedFormatError):
        MhaHeader(4, (1, 1, 1, 1), "uint8", (1, 1, 1, 1))
