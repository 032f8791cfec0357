"""Dataset manifest JSON and image loading."""

from __future__ import annotations

import json
import os
import threading

import numpy as np

from .core import (
    DEFAULT_LANDMARK_COUNT,
    DatasetManifest,
    ImageMeta,
    ImageRecord,
    LandmarkSet,
    ManifestEntry,
    atomic_write_text,
    institution_for_spacing,
    normalize_intensities,
    read_landmark_csv,
)
from .errors import DataError, ParseError
from .mha import load_slice, read_mha


def _landmarks_from_json(value, k, root, csv_cache, image_id):
    if isinstance(value, str):
        path = os.path.join(root, value)
        if path not in csv_cache:
            csv_cache[path] = read_landmark_csv(path, k)
        try:
            return csv_cache[path][image_id]
        except KeyError:
            raise DataError(f"{value}: no landmarks for image {image_id}") from None
    pts = np.full((k, 2), np.nan)
    vis = np.zeros(k, bool)
    if len(value) != k:
        raise DataError(f"{image_id}: {len(value)} inline landmarks, expected {k}")
    for i, p in enumerate(value):
        if p is None:
            continue
        pts[i] = p
        vis[i] = True
    return LandmarkSet(pts, vis)


def manifest_from_dict(doc, root=".") -> DatasetManifest:
    k = int(doc.get("landmark_count", DEFAULT_LANDMARK_COUNT))
    entries = []
    csv_cache = {}
    for raw in doc.get("entries", []):
        try:
            iid = str(raw["image_id"])
            spacing = float(raw["spacing"])
            meta = ImageMeta(
                iid,
                spacing,
                int(raw["width"]),
                int(raw["height"]),
                raw.get("institution") or institution_for_spacing(spacing),
            )
            landmarks = _landmarks_from_json(raw["landmarks"], k, root, csv_cache, iid)
            entries.append(
                ManifestEntry(meta, landmarks, raw.get("split", "train"), raw.get("file"), raw.get("slice"))
            )
        except KeyError as exc:
            raise DataError(f"manifest entry missing field {exc}") from None
    return DatasetManifest(entries, k, root)


def load_manifest(path) -> DatasetManifest:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, path) from None
    return manifest_from_dict(doc, os.path.dirname(os.path.abspath(path)))


def _round6(v):
    return float(f"{v:.6f}")


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    entries = []
    for e in manifest.entries:
        lm = [
            [_round6(x), _round6(y)] if v else None
            for (x, y), v in zip(e.landmarks.points, e.landmarks.visible)
        ]
        item = {
            "image_id": e.meta.image_id,
            "file": e.file,
            "spacing": e.meta.spacing_mm_per_px,
            "width": e.meta.width,
            "height": e.meta.height,
            "split": e.split,
            "institution": e.meta.institution,
            "landmarks": lm,
        }
        if e.slice is not None:
            item["slice"] = e.slice
        entries.append(item)
    return {"landmark_count": manifest.landmark_count, "entries": entries}


def save_manifest(manifest: DatasetManifest, path) -> None:
    text = json.dumps(manifest_to_dict(manifest), indent=1) + "\n"
    atomic_write_text(path, text)


class ImageLoader:
    """Loads manifest images, caching decoded MetaImage files by path."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._cache = {}
        self._lock = threading.Lock()

    def _array(self, path):
        with self._lock:
            if path not in self._cache:
                self._cache[path] = read_mha(path)[1]
            return self._cache[path]

    def load(self, entry) -> ImageRecord:
        if isinstance(entry, str):
            entry = self.manifest.by_id[entry]
        if not entry.file:
            raise DataError(f"{entry.meta.image_id}: manifest entry has no image file")
        path = os.path.join(self.manifest.root, entry.file)
        if not os.path.exists(path):
            raise DataError(f"{entry.meta.image_id}: image file {path} not found")
        arr = load_slice(self._array(path), entry.slice, entry.meta.width, entry.meta.height)
        return ImageRecord(entry.meta, normalize_intensities(arr))
