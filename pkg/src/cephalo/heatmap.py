"""Gaussian heatmap encoding, argmax decoding and the HMAP tensor file."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .core import LandmarkSet, atomic_write_bytes
from .errors import ConfigError, DataError, ParseError

DEFAULT_SIGMA = 2.0
# sub-pixel step toward the larger neighbour
QUARTER = 0.25


@dataclass(frozen=True, eq=False)
class HeatmapStack:
    """``channels`` has shape ``(K, H, W)``; one non-negative map per landmark."""

    channels: np.ndarray
    image_id: str = ""

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim != 3 or ch.shape[0] < 1:
            raise DataError(f"heatmap stack must be (K, H, W), got {ch.shape}")
        if not np.all(np.isfinite(ch)) or np.any(ch < 0):
            raise DataError("heatmap values must be finite and >= 0")
        object.__setattr__(self, "channels", ch)

    @property
    def k(self):
        return self.channels.shape[0]

    @property
    def resolution(self):
        """Model resolution as ``(width, height)``."""
        return (self.channels.shape[2], self.channels.shape[1])


def encode(landmarks: LandmarkSet, w: int, h: int, sigma: float = DEFAULT_SIGMA, image_id=""):
    if w < 1 or h < 1:
        raise ConfigError(f"heatmap extents must be positive, got {w}x{h}")
    if not sigma > 0:
        raise ConfigError("sigma must be positive")
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    out = np.zeros((landmarks.k, h, w))
    for i, ((x, y), vis) in enumerate(zip(landmarks.points, landmarks.visible)):
        if not vis:
            continue
        # separable: exp(-(dx^2 + dy^2) / 2s^2) = gx * gy
        gx = np.exp(-((xs - x) ** 2) / (2 * sigma**2))
        gy = np.exp(-((ys - y) ** 2) / (2 * sigma**2))
        out[i] = np.outer(gy, gx)
    return HeatmapStack(out, image_id)


def _refine(line, idx):
    if idx <= 0 or idx >= len(line) - 1:
        return 0.0
    left, right = line[idx - 1], line[idx + 1]
    if right > left:
        return QUARTER
    if left > right:
        return -QUARTER
    return 0.0


def decode(stack: HeatmapStack) -> LandmarkSet:
    """Argmax per channel with a quarter-pixel nudge; confidence is the peak value."""
    ch = stack.channels
    k, h, w = ch.shape
    flat = ch.reshape(k, -1)
    # np.argmax returns the first maximum: smallest row-major index on ties
    idx = flat.argmax(axis=1)
    peak = flat[np.arange(k), idx]
    pts = np.full((k, 2), np.nan)
    vis = peak > 0
    for i in np.flatnonzero(vis):
        r, c = divmod(int(idx[i]), w)
        pts[i, 0] = c + _refine(ch[i, r, :], c)
        pts[i, 1] = r + _refine(ch[i, :, c], r)
    return LandmarkSet(pts, vis, np.where(vis, peak, 0.0))


def decode_to_native(stack: HeatmapStack, native_w: int, native_h: int) -> LandmarkSet:
    """Decode, then undo the per-axis resize back to native pixel coordinates."""
    if native_w is None or native_h is None:
        raise DataError("native extents are required")
    if native_w < 1 or native_h < 1:
        raise DataError(f"invalid native extents {native_w}x{native_h}")
    ls = decode(stack)
    mw, mh = stack.resolution
    if (mw, mh) == (native_w, native_h):
        return ls
    pts = ls.points / np.array([mw / native_w, mh / native_h])
    return ls.replace(points=pts)


# HMAP interchange format: "HMAP 1 <K> <H> <W> f32le\n" + K*H*W float32 LE


def format_hmap(stack: HeatmapStack) -> bytes:
    k, h, w = stack.channels.shape
    head = f"HMAP 1 {k} {h} {w} f32le\n".encode("ascii")
    return head + stack.channels.astype("<f4").tobytes()


def write_hmap(stack: HeatmapStack, path) -> None:
    atomic_write_bytes(path, format_hmap(stack))


def parse_hmap(data: bytes, image_id="") -> HeatmapStack:
    nl = data.find(b"\n")
    if nl < 0 or nl > 256:
        raise ParseError("missing HMAP header line")
    parts = data[:nl].decode("ascii", errors="replace").split()
    if len(parts) != 6 or parts[0] != "HMAP":
        raise ParseError(f"bad HMAP header {data[:nl]!r}", 1)
    if parts[1] != "1" or parts[5] != "f32le":
        raise ParseError(f"unsupported HMAP version/dtype {parts[1]} {parts[5]}", 1)
    try:
        k, h, w = (int(p) for p in parts[2:5])
    except ValueError:
        raise ParseError("non-integer HMAP extents", 1) from None
    if min(k, h, w) < 1:
        raise ParseError("HMAP extents must be positive", 1)
    payload = data[nl + 1 :]
    expected = k * h * w * 4
    if len(payload) != expected:
        raise DataError(f"HMAP payload has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(k, h, w)
    return HeatmapStack(arr.astype(np.float64), image_id)


def read_hmap(path, image_id=None) -> HeatmapStack:
    with open(path, "rb") as fh:
        data = fh.read()
    if image_id is None:
        image_id = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    try:
        return parse_hmap(data, image_id)
    except ParseError as exc:
        exc.path = os.fspath(path)
        raise


def hmap_header(path):
    """Read only ``(K, H, W)`` from an HMAP file."""
    with open(path, "rb") as fh:
        line = fh.readline(257)
    parts = line.decode("ascii", errors="replace").split()
    if len(parts) != 6 or parts[0] != "HMAP":
        raise ParseError("bad HMAP header", 1, os.fspath(path))
    return tuple(int(p) for p in parts[2:5])

