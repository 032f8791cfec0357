"""MetaImage (.mha) reader/writer for single-file, uncompressed images.

Only the subset needed for packed cephalogram stacks is handled: 2-D or 3-D
images, one channel, little-endian payload stored inline after
``ElementDataFile = LOCAL``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .core import (
    ImageMeta,
    ImageRecord,
    atomic_write_bytes,
    institution_for_spacing,
    normalize_intensities,
)
from .errors import DataError, ParseError, SizeMismatchError, UnsupportedFormatError

MET_TYPES = {
    "MET_UCHAR": "uint8",
    "MET_SHORT": "int16",
    "MET_USHORT": "uint16",
    "MET_FLOAT": "float32",
}
_TYPE_NAMES = {v: k for k, v in MET_TYPES.items()}
_MAX_HEADER_BYTES = 1 << 16


@dataclass(frozen=True)
class MhaHeader:
    """Header of a local-data MetaImage file.

    ``dim_size`` and ``element_spacing`` follow the MetaImage order, fastest
    axis first: ``(width, height[, depth])``.
    """

    ndims: int
    dim_size: tuple
    element_type: str
    element_spacing: tuple
    data_local: bool = True

    def __post_init__(self):
        object.__setattr__(self, "dim_size", tuple(int(d) for d in self.dim_size))
        object.__setattr__(self, "element_spacing", tuple(float(s) for s in self.element_spacing))
        if self.ndims not in (2, 3):
            raise UnsupportedFormatError(f"NDims must be 2 or 3, got {self.ndims}")
        if len(self.dim_size) != self.ndims or len(self.element_spacing) != self.ndims:
            raise DataError("DimSize and ElementSpacing must have NDims entries")
        if any(d < 1 for d in self.dim_size):
            raise DataError(f"DimSize entries must be >= 1, got {self.dim_size}")
        if self.element_type not in _TYPE_NAMES:
            raise UnsupportedFormatError(f"unsupported element type {self.element_type!r}")
        if not self.data_local:
            raise UnsupportedFormatError("only ElementDataFile = LOCAL is supported")

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.element_type).newbyteorder("<")

    @property
    def shape(self) -> tuple:
        """Array shape in C order (slowest axis first)."""
        return tuple(reversed(self.dim_size))

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.dim_size)) * self.dtype.itemsize


def _fmt_float(v: float) -> str:
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def _parse_bool(value: str, key: str, lineno: int) -> bool:
    v = value.strip().lower()
    if v in ("true", "1"):
        return True
    if v in ("false", "0"):
        return False
    raise ParseError(f"{key}: expected True/False, got {value!r}", lineno)


def parse_mha(data: bytes):
    """Decode MetaImage bytes into ``(MhaHeader, array)``."""
    fields = {}
    pos = 0
    lineno = 0
    data_file = None
    while data_file is None:
        end = data.find(b"\n", pos)
        if end < 0 or end > _MAX_HEADER_BYTES:
            raise ParseError("header not terminated by ElementDataFile")
        raw = data[pos:end]
        pos = end + 1
        lineno += 1
        line = raw.rstrip(b"\r").decode("ascii", errors="replace")
        if not line.strip():
            continue
        if "=" not in line:
            raise ParseError(f"expected 'Key = Value', got {line!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        if key == "elementdatafile":
            data_file = value
        else:
            fields[key] = (value, lineno)

    if data_file.upper() != "LOCAL":
        raise UnsupportedFormatError(f"external data file {data_file!r}; only LOCAL is supported")

    def get(key, default=None):
        return fields.get(key, (default, None))

    for key in ("compresseddata",):
        value, ln = get(key, "False")
        if _parse_bool(value, "CompressedData", ln):
            raise UnsupportedFormatError("compressed MetaImage payloads are not supported")
    for key in ("binarydatabyteordermsb", "elementbyteordermsb"):
        value, ln = get(key, "False")
        if _parse_bool(value, key, ln):
            raise UnsupportedFormatError("big-endian payloads are not supported")
    value, ln = get("elementnumberofchannels", "1")
    if value.strip() != "1":
        raise UnsupportedFormatError("multi-channel images are not supported")

    try:
        ndims = int(get("ndims")[0])
        dim_size = tuple(int(t) for t in get("dimsize")[0].split())
    except (TypeError, ValueError):
        raise ParseError("missing or invalid NDims/DimSize") from None
    met = get("elementtype")[0]
    if met is None:
        raise ParseError("missing ElementType")
    if met.upper() not in MET_TYPES:
        raise UnsupportedFormatError(f"unsupported ElementType {met!r}")
    spacing_txt = get("elementspacing")[0] or get("elementsize")[0]
    try:
        spacing = tuple(float(t) for t in spacing_txt.split()) if spacing_txt else (1.0,) * ndims
    except ValueError:
        raise ParseError("invalid ElementSpacing", fields["elementspacing"][1]) from None

    header = MhaHeader(ndims, dim_size, MET_TYPES[met.upper()], spacing)
    payload = data[pos:]
    if len(payload) != header.nbytes:
        raise SizeMismatchError(
            f"payload has {len(payload)} bytes, header declares {header.nbytes}"
        )
    arr = np.frombuffer(payload, dtype=header.dtype).reshape(header.shape)
    return header, arr.astype(header.element_type)


def read_mha(path):
    """Read a MetaImage file; returns ``(header, array)`` with C-order shape."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return parse_mha(data)
    except ParseError as exc:
        exc.path = os.fspath(path)
        raise


def format_mha(header: MhaHeader, buffer) -> bytes:
    arr = np.asarray(buffer)
    if arr.size * header.dtype.itemsize != header.nbytes:
        raise SizeMismatchError(
            f"buffer has {arr.size} elements, header declares {int(np.prod(header.dim_size))}"
        )
    lines = [
        "ObjectType = Image",
        f"NDims = {header.ndims}",
        "DimSize = " + " ".join(str(d) for d in header.dim_size),
        f"ElementType = {_TYPE_NAMES[header.element_type]}",
        "ElementSpacing = " + " ".join(_fmt_float(s) for s in header.element_spacing),
        "ElementDataFile = LOCAL",
    ]
    payload = np.ascontiguousarray(arr, dtype=header.dtype).tobytes()
    return ("\n".join(lines) + "\n").encode("ascii") + payload


def write_mha(header: MhaHeader, buffer, path) -> None:
    atomic_write_bytes(path, format_mha(header, buffer))


def header_for(array: np.ndarray, spacing=None) -> MhaHeader:
    """Build a header describing ``array`` (C order, 2-D or 3-D)."""
    arr = np.asarray(array)
    dims = tuple(reversed(arr.shape))
    if spacing is None:
        spacing = (1.0,) * arr.ndim
    return MhaHeader(arr.ndim, dims, arr.dtype.name, tuple(spacing))


def pack_to_common_canvas(images):
    """Zero-pad images to the largest extents, anchored at the top-left.

    Returns ``(stack, offsets)`` where ``stack`` has shape
    ``(N, max_height, max_width)`` and every offset is ``(0, 0)`` so landmark
    coordinates stay valid on the packed canvas.
    """
    images = list(images)
    if not images:
        raise DataError("cannot pack an empty image list")
    width = max(im.meta.width for im in images)
    height = max(im.meta.height for im in images)
    stack = np.zeros((len(images), height, width), dtype=np.float64)
    for i, im in enumerate(images):
        stack[i, : im.meta.height, : im.meta.width] = im.pixels
    return stack, [(0, 0)] * len(images)


def write_packed(images, path, element_type="float32") -> MhaHeader:
    """Pack ``ImageRecord`` s into one 3-D MetaImage file."""
    stack, _ = pack_to_common_canvas(images)
    if element_type == "float32":
        data = stack.astype(np.float32)
    elif element_type in ("uint8", "uint16"):
        top = np.iinfo(element_type).max
        data = np.round(stack * top).astype(element_type)
    else:
        raise UnsupportedFormatError(f"cannot pack as {element_type}")
    # per-slice spacing lives in the manifest; the header carries the first one
    s = images[0].meta.spacing_mm_per_px
    header = header_for(data, (s, s, 1.0))
    write_mha(header, data, path)
    return header


def load_slice(array: np.ndarray, index: int | None, width: int, height: int) -> np.ndarray:
    """Cut one image out of a (possibly packed) MetaImage array."""
    if array.ndim == 3:
        if index is None or not (0 <= index < array.shape[0]):
            raise DataError(f"slice index {index} outside packed stack of {array.shape[0]}")
        array = array[index]
    elif index not in (None, 0):
        raise DataError("slice index given for a 2-D image")
    if array.shape[0] < height or array.shape[1] < width:
        raise DataError(f"image {array.shape} smaller than declared {height}x{width}")
    return array[:height, :width]


def record_from_mha(path, image_id=None, spacing=None) -> ImageRecord:
    """Read a 2-D MetaImage file into a normalised ``ImageRecord``."""
    header, arr = read_mha(path)
    if arr.ndim != 2:
        raise DataError(f"{path}: expected a 2-D image")
    s = float(spacing if spacing is not None else header.element_spacing[0])
    image_id = image_id or os.path.splitext(os.path.basename(os.fspath(path)))[0]
    h, w = arr.shape
    meta = ImageMeta(image_id, s, w, h, institution_for_spacing(s))
    return ImageRecord(meta, normalize_intensities(arr))
