"""Domain types, the landmark CSV format and annotator merging.

Coordinates follow one convention everywhere: ``x`` is the column, ``y`` the
row, the origin is the top-left pixel and pixel centres sit on integers.
Point arrays are shaped ``(K, 2)`` holding ``(x, y)`` pairs.
"""

from __future__ import annotations

import csv
import io
import math
import os
import threading
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DataError, ParseError

DEFAULT_LANDMARK_COUNT = 38
INSTITUTIONS = ("A", "B", "C", "other")
# pixel spacing (mm/px) of the three contributing institutions
INSTITUTION_SPACING = {"A": 0.1, "B": 0.125, "C": 0.096}
SPLITS = ("train", "val", "test")
CSV_HEADER = ("image_id", "landmark_index", "x", "y", "confidence")


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    """K landmarks with visibility and optional confidences.

    Equality ignores the coordinates and confidences of invisible points,
    which carry no meaning.
    """

    points: np.ndarray
    visible: np.ndarray = None
    confidence: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DataError(f"points must have shape (K, 2), got {pts.shape}")
        k = pts.shape[0]
        vis = np.ones(k, bool) if self.visible is None else np.asarray(self.visible, bool)
        if vis.shape != (k,):
            raise DataError(f"visible must have length {k}, got {vis.shape}")
        if not np.all(np.isfinite(pts[vis])):
            raise DataError("visible landmarks must have finite coordinates")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "visible", _frozen(vis))
        if self.confidence is not None:
            conf = np.asarray(self.confidence, dtype=np.float64)
            if conf.shape != (k,):
                raise DataError(f"confidence must have length {k}, got {conf.shape}")
            if np.any(conf[vis] < 0) or not np.all(np.isfinite(conf[vis])):
                raise DataError("confidences must be finite and >= 0")
            object.__setattr__(self, "confidence", _frozen(conf))

    def __len__(self):
        return self.points.shape[0]

    @property
    def k(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LandmarkSet):
            return NotImplemented
        if self.k != other.k or not np.array_equal(self.visible, other.visible):
            return False
        v = self.visible
        if not np.array_equal(self.points[v], other.points[v]):
            return False
        if (self.confidence is None) != (other.confidence is None):
            return False
        if self.confidence is not None:
            return np.array_equal(self.confidence[v], other.confidence[v])
        return True

    __hash__ = None

    def replace(self, **changes) -> "LandmarkSet":
        kw = dict(points=self.points, visible=self.visible, confidence=self.confidence)
        kw.update(changes)
        return LandmarkSet(**kw)

    @classmethod
    def invisible(cls, k: int) -> "LandmarkSet":
        return cls(np.full((k, 2), np.nan), np.zeros(k, bool))


@dataclass(frozen=True)
class ImageMeta:
    image_id: str
    spacing_mm_per_px: float
    width: int
    height: int
    institution: str = "other"

    def __post_init__(self):
        if not self.spacing_mm_per_px > 0:
            raise DataError(f"{self.image_id}: spacing must be positive")
        if self.width < 1 or self.height < 1:
            raise DataError(f"{self.image_id}: extents must be >= 1")
        if self.institution not in INSTITUTIONS:
            raise DataError(f"{self.image_id}: unknown institution {self.institution!r}")


def institution_for_spacing(spacing: float) -> str:
    for name, s in INSTITUTION_SPACING.items():
        if math.isclose(spacing, s, rel_tol=1e-9):
            return name
    return "other"


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """Grayscale raster of shape ``(height, width)`` with values in [0, 1]."""

    meta: ImageMeta
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.shape != (self.meta.height, self.meta.width):
            raise DataError(
                f"{self.meta.image_id}: pixel shape {px.shape} does not match "
                f"meta ({self.meta.height}, {self.meta.width})"
            )
        if not np.all(np.isfinite(px)):
            raise DataError(f"{self.meta.image_id}: non-finite pixel values")
        object.__setattr__(self, "pixels", _frozen(px))


def normalize_intensities(raw: np.ndarray) -> np.ndarray:
    """Map a raw raster of any supported dtype onto [0, 1] reals.

    Integer types are divided by their dtype maximum (negatives clipped);
    floats already inside [0, 1] pass through, others are min-max scaled.
    """
    raw = np.asarray(raw)
    if np.issubdtype(raw.dtype, np.integer):
        top = float(np.iinfo(raw.dtype).max)
        return np.clip(raw.astype(np.float64), 0, None) / top
    out = raw.astype(np.float64)
    if out.size and (out.min() < 0 or out.max() > 1):
        lo, hi = out.min(), out.max()
        out = (out - lo) / (hi - lo) if hi > lo else np.zeros_like(out)
    return out


@dataclass(frozen=True, eq=False)
class ManifestEntry:
    meta: ImageMeta
    landmarks: LandmarkSet
    split: str = "train"
    file: str | None = None
    slice: int | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"{self.meta.image_id}: unknown split {self.split!r}")


@dataclass(frozen=True, eq=False)
class DatasetManifest:
    entries: tuple
    landmark_count: int = DEFAULT_LANDMARK_COUNT
    root: str = "."
    by_id: dict = field(init=False, repr=False)

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        ids = [e.meta.image_id for e in entries]
        if len(set(ids)) != len(ids):
            raise DataError("manifest image_ids must be unique")
        for e in entries:
            if e.landmarks.k != self.landmark_count:
                raise DataError(
                    f"{e.meta.image_id}: {e.landmarks.k} landmarks, "
                    f"manifest declares {self.landmark_count}"
                )
        object.__setattr__(self, "by_id", {e.meta.image_id: e for e in entries})

    def split(self, name: str | None) -> list:
        """Entries of one split; ``None`` or ``"all"`` returns every entry."""
        if name in (None, "all"):
            return list(self.entries)
        return [e for e in self.entries if e.split == name]

    def ground_truth(self, split=None) -> dict:
        return {e.meta.image_id: e.landmarks for e in self.split(split)}


def merge_annotations(a: LandmarkSet, b: LandmarkSet) -> LandmarkSet:
    """Midpoint of two annotators' landmark sets."""
    if a.k != b.k:
        raise DataError(f"annotation length mismatch: {a.k} vs {b.k}")
    if not (a.visible.all() and b.visible.all()):
        raise DataError("annotations must mark every landmark")
    # (a + b) / 2 is symmetric and exact for a == b
    return LandmarkSet((a.points + b.points) / 2.0)


def read_landmark_csv(path, k: int = DEFAULT_LANDMARK_COUNT) -> dict[str, LandmarkSet]:
    """Parse a landmark CSV into ``{image_id: LandmarkSet}``.

    Missing landmark indices come back invisible. The confidence column must
    be either filled or empty for all rows of one image.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_landmark_csv(fh.read(), k=k, path=os.fspath(path))


def parse_landmark_csv(text: str, k: int = DEFAULT_LANDMARK_COUNT, path=None):
    rows: dict[str, dict[int, tuple]] = {}
    reader = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if lineno == 1 and row[0].strip() == CSV_HEADER[0]:
            if tuple(c.strip() for c in row) != CSV_HEADER:
                raise ParseError(f"unexpected header {row}", lineno, path)
            continue
        if len(row) not in (4, 5):
            raise ParseError(f"expected 5 fields, got {len(row)}", lineno, path)
        image_id = row[0].strip()
        if not image_id:
            raise ParseError("empty image_id", lineno, path)
        try:
            idx = int(row[1])
            x = float(row[2])
            y = float(row[3])
            conf_txt = row[4].strip() if len(row) == 5 else ""
            conf = float(conf_txt) if conf_txt else None
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", lineno, path) from None
        if not (0 <= idx < k):
            raise ParseError(f"landmark index {idx} outside [0, {k})", lineno, path)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ParseError("non-finite coordinate", lineno, path)
        if conf is not None and not (math.isfinite(conf) and conf >= 0):
            raise ParseError("confidence must be finite and >= 0", lineno, path)
        per_image = rows.setdefault(image_id, {})
        if idx in per_image:
            raise ParseError(f"duplicate key ({image_id}, {idx})", lineno, path)
        per_image[idx] = (x, y, conf, lineno)

    out = {}
    for image_id, per_image in rows.items():
        pts = np.full((k, 2), np.nan)
        vis = np.zeros(k, bool)
        confs = np.zeros(k)
        has_conf = {c is not None for (_, _, c, _) in per_image.values()}
        if len(has_conf) > 1:
            line = max(v[3] for v in per_image.values())
            raise ParseError(f"{image_id}: confidence column partly empty", line, path)
        for idx, (x, y, c, _) in per_image.items():
            pts[idx] = (x, y)
            vis[idx] = True
            if c is not None:
                confs[idx] = c
        out[image_id] = LandmarkSet(pts, vis, confs if has_conf == {True} else None)
    return out


def format_landmark_csv(sets: Mapping[str, LandmarkSet]) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_HEADER) + "\n")
    for image_id in sorted(sets):
        ls = sets[image_id]
        for i in range(ls.k):
            if not ls.visible[i]:
                continue
            x, y = ls.points[i]
            conf = "" if ls.confidence is None else f"{ls.confidence[i]:.6f}"
            buf.write(f"{image_id},{i},{x:.6f},{y:.6f},{conf}\n")
    return buf.getvalue()


def write_landmark_csv(sets: Mapping[str, LandmarkSet], path) -> None:
    """Write landmark sets sorted by (image_id, index); invisible points are omitted."""
    atomic_write_text(path, format_landmark_csv(sets))


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    tmp = f"{path}.{os.getpid()}.{threading.get_ident()}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
