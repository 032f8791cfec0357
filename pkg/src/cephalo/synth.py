"""Desk-scale synthetic cephalogram stand-ins.

Each image is a flat background with one Gaussian blob per landmark. Blob
centres sit on a fixed anatomical layout (a grid in normalised coordinates)
jittered per image, which gives the template backend the same strong
positional prior real cephalograms have.
"""

from __future__ import annotations

import math

import numpy as np

from .core import DatasetManifest, ImageMeta, ImageRecord, LandmarkSet, ManifestEntry
from .errors import ConfigError
from .rng import derive_rng

# the three institutions at 1/10 of their native extents, (width, height, spacing)
SYNTH_SITES = {
    "A": (288, 230, 0.1),
    "B": (209, 194, 0.125),
    "C": (194, 240, 0.096),
}
BACKGROUND = 0.1
BLOB_PEAK = 0.8
BLOB_SIGMA = 2.0
MARGIN = 0.12
JITTER = 0.15


def anchor_layout(k: int) -> np.ndarray:
    """Normalised ``(x, y)`` anchor per landmark on a near-square grid."""
    cols = math.ceil(math.sqrt(k))
    rows = math.ceil(k / cols)
    out = []
    for i in range(k):
        r, c = divmod(i, cols)
        fx = 0.5 if cols == 1 else c / (cols - 1)
        fy = 0.5 if rows == 1 else r / (rows - 1)
        out.append((MARGIN + (1 - 2 * MARGIN) * fx, MARGIN + (1 - 2 * MARGIN) * fy))
    return np.array(out)


def _grid_step(k):
    cols = math.ceil(math.sqrt(k))
    rows = math.ceil(k / cols)
    return (1 - 2 * MARGIN) / max(cols - 1, 1), (1 - 2 * MARGIN) / max(rows - 1, 1)


def render_blobs(width, height, centers, sigma=BLOB_SIGMA) -> np.ndarray:
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    img = np.zeros((height, width))
    for x, y in centers:
        gx = np.exp(-((xs - x) ** 2) / (2 * sigma**2))
        gy = np.exp(-((ys - y) ** 2) / (2 * sigma**2))
        np.maximum(img, np.outer(gy, gx), out=img)
    return BACKGROUND + BLOB_PEAK * img


def assign_splits(ids, seed) -> dict:
    """Shuffle ids into train/val/test at the 300:50:50 local-split ratio."""
    n = len(ids)
    order = derive_rng(seed, "split").permutation(n)
    if n < 2:
        n_test, n_val = 0, 0
    else:
        n_test = max(1, round(n / 8))
        n_val = round(n / 8) if n - n_test - round(n / 8) >= 1 else 0
    split = {}
    for rank, idx in enumerate(order):
        split[ids[idx]] = "test" if rank < n_test else "val" if rank < n_test + n_val else "train"
    return split


def synth_dataset(n_images: int, k_landmarks: int, seed: int):
    """Return ``(records, manifest)`` for a seeded synthetic dataset."""
    if n_images < 1 or k_landmarks < 1:
        raise ConfigError("n_images and k_landmarks must be >= 1")
    anchors = anchor_layout(k_landmarks)
    step_x, step_y = _grid_step(k_landmarks)
    sites = sorted(SYNTH_SITES)
    width_digits = len(str(n_images - 1))
    records, entries = [], []
    ids = [f"synth{i:0{width_digits}d}" for i in range(n_images)]
    splits = assign_splits(ids, seed)
    for iid in ids:
        rng = derive_rng(seed, "synth", iid)
        site = sites[int(rng.integers(len(sites)))]
        w, h, spacing = SYNTH_SITES[site]
        jitter = rng.uniform(-1.0, 1.0, size=(k_landmarks, 2)) * JITTER * np.array([step_x, step_y])
        norm = np.clip(anchors + jitter, 0.02, 0.98)
        # stored at the CSV precision so files and memory agree exactly
        centers = np.round(norm * np.array([w - 1, h - 1]), 6)
        meta = ImageMeta(iid, spacing, w, h, site)
        records.append(ImageRecord(meta, render_blobs(w, h, centers)))
        entries.append(ManifestEntry(meta, LandmarkSet(centers), splits[iid]))
    return records, DatasetManifest(entries, k_landmarks)
