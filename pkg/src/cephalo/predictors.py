"""Predictor backends standing in for the trained networks.

A backend turns an ``ImageRecord`` into a ``LandmarkSet`` in native pixel
coordinates with confidences. Heatmap backends share one path: resize to
the member's model resolution, produce a ``HeatmapStack``, decode it and map
the peaks back to native coordinates.

* ``ExternalBackend`` reads heatmaps exported by any outside model.
* ``TemplateBackend`` is a non-deep reference: NCC template matching.
* ``OracleBackend`` perturbs the ground truth with known noise; it exists to
  test fusion and metrics where the true error distribution is known.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import LandmarkSet, atomic_write_text
from .errors import ConfigError, DataError
from .heatmap import HeatmapStack, decode_to_native, read_hmap
from .mha import header_for, read_mha, write_mha
from .transforms import Resize, resize_points

BACKENDS = ("external", "template", "oracle")
PYRAMID = (512, 800, 1024, 1280, 1408)


@dataclass(frozen=True)
class PredictorSpec:
    tag: str
    backend: str
    resolution: tuple
    augmentation: str = "none"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")
        w, h = (int(v) for v in self.resolution)
        if w < 1 or h < 1:
            raise ConfigError(f"{self.tag}: model resolution must be positive")
        object.__setattr__(self, "resolution", (w, h))
        if not self.tag or "/" in self.tag or self.tag == "fused":
            raise ConfigError(f"invalid model tag {self.tag!r}")

    def to_dict(self):
        return {
            "tag": self.tag,
            "backend": self.backend,
            "resolution": list(self.resolution),
            "augmentation": self.augmentation,
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, d, backend=None):
        return cls(
            d["tag"],
            backend or d.get("backend", "oracle"),
            tuple(d["resolution"]) if not isinstance(d["resolution"], int) else (d["resolution"],) * 2,
            d.get("augmentation", "none"),
            dict(d.get("params", {})),
        )


@dataclass(frozen=True)
class EnsembleSpec:
    members: tuple

    def __post_init__(self):
        members = tuple(self.members)
        object.__setattr__(self, "members", members)
        if len(members) < 2:
            raise ConfigError("an ensemble needs at least two members")
        tags = [m.tag for m in members]
        if len(set(tags)) != len(tags):
            raise ConfigError("member tags must be unique")

    @property
    def tags(self):
        return tuple(m.tag for m in self.members)

    def select(self, tags) -> "EnsembleSpec":
        """Keep the named members, in roster order."""
        unknown = set(tags) - set(self.tags)
        if unknown:
            raise ConfigError(f"unknown members: {sorted(unknown)}")
        return EnsembleSpec([m for m in self.members if m.tag in set(tags)])


# the seven-model roster: augmentation family and pyramid level per member
ROSTER = (
    ("bright512", "brightness", 512),
    ("rot800", "rotation", 800),
    ("crop800a", "shift_crop", 800),
    ("crop800b", "shift_crop", 800),
    ("crop1024", "shift_crop", 1024),
    ("crop1280", "shift_crop", 1280),
    ("crop1408", "shift_crop", 1408),
)


def default_ensemble(backend="oracle", resolutions=None, params=None) -> EnsembleSpec:
    """The seven-member roster, optionally remapped onto other resolutions.

    ``resolutions`` replaces the five pyramid levels positionally, so a
    desk-scale run keeps the same member structure at smaller sizes.
    """
    levels = dict(zip(PYRAMID, resolutions or PYRAMID))
    if resolutions is not None and len(resolutions) != len(PYRAMID):
        raise ConfigError(f"expected {len(PYRAMID)} pyramid resolutions, got {len(resolutions)}")
    return EnsembleSpec(
        [
            PredictorSpec(tag, backend, (levels[r], levels[r]), aug, dict(params or {}))
            for tag, aug, r in ROSTER
        ]
    )


class Backend:
    name = "base"

    def predict(self, spec: PredictorSpec, record, rng=None) -> LandmarkSet:
        raise NotImplementedError


class HeatmapBackend(Backend):
    needs_image = True

    def heatmaps(self, spec, model_image, record) -> HeatmapStack:
        raise NotImplementedError

    def predict(self, spec, record, rng=None):
        w, h = spec.resolution
        model_image = Resize(w, h).apply_image(record.pixels) if self.needs_image else None
        stack = self.heatmaps(spec, model_image, record)
        if stack.resolution != (w, h):
            raise DataError(
                f"{spec.tag}/{record.meta.image_id}: heatmap resolution {stack.resolution} "
                f"does not match member resolution {(w, h)}"
            )
        return decode_to_native(stack, record.meta.width, record.meta.height)


class ExternalBackend(HeatmapBackend):
    """Reads ``<root>/<tag>/<image_id>.hmap`` tensors."""

    name = "external"
    needs_image = False

    def __init__(self, root, k=None):
        self.root = os.fspath(root)
        self.k = k

    def path_for(self, spec, image_id):
        return os.path.join(self.root, spec.tag, f"{image_id}.hmap")

    def heatmaps(self, spec, model_image, record):
        path = self.path_for(spec, record.meta.image_id)
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing heatmap tensor {path}")
        stack = read_hmap(path, record.meta.image_id)
        if self.k is not None and stack.k != self.k:
            raise DataError(f"{path}: {stack.k} channels, expected {self.k}")
        return stack


def oracle_predict(gt: LandmarkSet, noise_sigma_px, mode="informative", rng=None):
    """Ground truth plus isotropic Gaussian noise.

    ``noise_sigma_px`` is a scalar or one value per landmark. In
    ``informative`` mode confidence is ``exp(-|eps| / max(sigma, 1))``, a
    strictly decreasing function of the error; ``uninformative`` draws it
    uniformly from (0, 1).
    """
    k = gt.k
    sigma = np.broadcast_to(np.asarray(noise_sigma_px, dtype=np.float64), (k,))
    if not np.all(sigma >= 0):
        raise ConfigError("noise sigma must be >= 0")
    if mode not in ("informative", "uninformative"):
        raise ConfigError(f"unknown oracle mode {mode!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    eps = rng.normal(0.0, 1.0, size=(k, 2)) * sigma[:, None]
    if mode == "informative":
        conf = np.exp(-np.hypot(eps[:, 0], eps[:, 1]) / np.maximum(sigma, 1.0))
    else:
        # open interval: redraw exact zeros
        conf = rng.uniform(0.0, 1.0, size=k)
        while np.any(conf == 0):
            conf = np.where(conf == 0, rng.uniform(0.0, 1.0, size=k), conf)
    pts = np.where(gt.visible[:, None], gt.points + eps, np.nan)
    return LandmarkSet(pts, gt.visible, np.where(gt.visible, conf, 0.0))


class OracleBackend(Backend):
    """Noisy copy of the ground truth; per-member ``noise_sigma`` in ``spec.params``."""

    name = "oracle"

    def __init__(self, ground_truth, noise_sigma=0.0, mode="informative"):
        self.ground_truth = ground_truth
        self.noise_sigma = noise_sigma
        self.mode = mode

    def predict(self, spec, record, rng=None):
        iid = record.meta.image_id if hasattr(record, "meta") else record
        if iid not in self.ground_truth:
            raise DataError(f"oracle has no ground truth for {iid}")
        sigma = spec.params.get("noise_sigma", self.noise_sigma)
        mode = spec.params.get("mode", self.mode)
        return oracle_predict(self.ground_truth[iid], sigma, mode, rng)


@dataclass(frozen=True, eq=False)
class TemplateBank:
    """Per-landmark mean position and mean patch at one model resolution."""

    resolution: tuple
    mean_positions: np.ndarray
    templates: np.ndarray
    spread: float = 0.0

    @property
    def patch_side(self):
        return self.templates.shape[1]

    @property
    def k(self):
        return self.templates.shape[0]

    def default_search_radius(self) -> int:
        return int(math.ceil(self.spread)) + 3

    def save(self, stem) -> None:
        """Write ``<stem>.mha`` (K x p x p float32) and ``<stem>.json``."""
        data = self.templates.astype(np.float32)
        write_mha(header_for(data), data, f"{stem}.mha")
        side = {
            "resolution": list(self.resolution),
            "patch_side": self.patch_side,
            "spread": self.spread,
            "mean_positions": [[float(x), float(y)] for x, y in self.mean_positions],
        }
        atomic_write_text(f"{stem}.json", json.dumps(side, indent=1) + "\n")

    @classmethod
    def load(cls, stem) -> "TemplateBank":
        _, arr = read_mha(f"{stem}.mha")
        with open(f"{stem}.json", encoding="utf-8") as fh:
            side = json.load(fh)
        if arr.ndim == 2:
            arr = arr[None]
        return cls(
            tuple(side["resolution"]),
            np.array(side["mean_positions"], dtype=np.float64),
            arr.astype(np.float64),
            float(side.get("spread", 0.0)),
        )


def _patch(image, cx, cy, half):
    padded = np.pad(image, half)
    return padded[cy : cy + 2 * half + 1, cx : cx + 2 * half + 1]


def template_train(samples, spec: PredictorSpec, patch_side: int = 33) -> TemplateBank:
    """Build a bank from ``(ImageRecord, LandmarkSet)`` training pairs.

    Images are resized to the member resolution first; patches are centred
    on the rounded ground truth and zero-padded at the borders.
    """
    samples = list(samples)
    if not samples:
        raise DataError("template training needs at least one image")
    if patch_side < 1 or patch_side % 2 == 0:
        raise ConfigError("patch_side must be odd and positive")
    w, h = spec.resolution
    half = patch_side // 2
    k = samples[0][1].k
    sums = np.zeros((k, patch_side, patch_side))
    pos_sum = np.zeros((k, 2))
    counts = np.zeros(k)
    all_pos = [[] for _ in range(k)]
    for record, gt in samples:
        model_image = Resize(w, h).apply_image(record.pixels)
        pts = resize_points(gt.points, (record.meta.width, record.meta.height), (w, h))
        for i in np.flatnonzero(gt.visible):
            cx = int(np.clip(round(pts[i, 0]), 0, w - 1))
            cy = int(np.clip(round(pts[i, 1]), 0, h - 1))
            sums[i] += _patch(model_image, cx, cy, half)
            pos_sum[i] += pts[i]
            counts[i] += 1
            all_pos[i].append(pts[i])
    if np.any(counts == 0):
        raise DataError("every landmark needs at least one annotated training image")
    mean = pos_sum / counts[:, None]
    spread = max(float(np.abs(np.array(p) - m).max()) for p, m in zip(all_pos, mean))
    return TemplateBank((w, h), mean, sums / counts[:, None, None], spread)


def _ncc(cross, s1, s2, template, scale):
    p2 = template.size
    t0 = template - template.mean()
    t_norm = math.sqrt(float((t0 * t0).sum()))
    var = s2 - s1 * s1 / p2
    denom = np.sqrt(np.clip(var, 0, None)) * t_norm
    # flat windows (relative to the data scale) and flat templates score 0
    flat = (var <= 1e-12 * max(1.0, scale) ** 2 * p2) | (t_norm == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        score = np.where(flat, 0.0, cross / np.where(flat, 1.0, denom))
    return np.clip(score, -1.0, 1.0)


def ncc_windows(windows: np.ndarray, template: np.ndarray) -> np.ndarray:
    """NCC of every ``(..., p, p)`` window with the template; flat inputs score 0."""
    t0 = template - template.mean()
    s1 = windows.sum(axis=(-2, -1))
    s2 = (windows * windows).sum(axis=(-2, -1))
    cross = np.einsum("...ij,ij->...", windows, t0)
    return _ncc(cross, s1, s2, template, float(np.abs(windows).max(initial=0.0)))


def _box_sums(a, p):
    c = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    c[1:, 1:] = a.cumsum(0).cumsum(1)
    return c[p:, p:] - c[:-p, p:] - c[p:, :-p] + c[:-p, :-p]


def ncc_region(region: np.ndarray, template: np.ndarray) -> np.ndarray:
    """NCC for every placement of ``template`` fully inside ``region``."""
    p = template.shape[0]
    t0 = template - template.mean()
    cross = np.einsum("abij,ij->ab", sliding_window_view(region, (p, p)), t0)
    s1 = _box_sums(region, p)
    s2 = _box_sums(region * region, p)
    return _ncc(cross, s1, s2, template, float(np.abs(region).max(initial=0.0)))


def template_predict(bank: TemplateBank, image: np.ndarray, search_radius: int) -> HeatmapStack:
    """NCC response ``(ncc + 1) / 2`` around each landmark's mean position.

    ``image`` must already be at the bank resolution. Pixels outside the
    search window stay zero.
    """
    image = np.asarray(image, dtype=np.float64)
    if search_radius < 0:
        raise ConfigError("search radius must be >= 0")
    h, w = image.shape
    p = bank.patch_side
    if p > h or p > w:
        raise DataError(f"template {p}x{p} larger than image {h}x{w}")
    if (w, h) != tuple(bank.resolution):
        raise DataError(f"image {w}x{h} does not match bank resolution {bank.resolution}")
    half = p // 2
    r = int(search_radius)
    pad = half + r
    padded = np.pad(image, pad)
    out = np.zeros((bank.k, h, w))
    for i in range(bank.k):
        cx = int(np.clip(round(bank.mean_positions[i, 0]), 0, w - 1))
        cy = int(np.clip(round(bank.mean_positions[i, 1]), 0, h - 1))
        # window centres (cx + u, cy + v), u, v in [-r, r]
        region = padded[cy - r + pad - half : cy + r + pad + half + 1,
                        cx - r + pad - half : cx + r + pad + half + 1]
        score = ncc_region(region, bank.templates[i])
        x0, y0 = cx - r, cy - r
        xs0, ys0 = max(0, x0), max(0, y0)
        xs1, ys1 = min(w, cx + r + 1), min(h, cy + r + 1)
        out[i, ys0:ys1, xs0:xs1] = (score[ys0 - y0 : ys1 - y0, xs0 - x0 : xs1 - x0] + 1.0) / 2.0
    return HeatmapStack(out)


class TemplateBackend(HeatmapBackend):
    name = "template"

    def __init__(self, banks, search_radius=None):
        self.banks = dict(banks)
        self.search_radius = search_radius

    def heatmaps(self, spec, model_image, record):
        try:
            bank = self.banks[spec.tag]
        except KeyError:
            raise DataError(f"no template bank trained for member {spec.tag}") from None
        r = spec.params.get("search_radius", self.search_radius)
        if r is None:
            r = bank.default_search_radius()
        stack = template_predict(bank, model_image, int(r))
        return HeatmapStack(stack.channels, record.meta.image_id)


def predict(spec: PredictorSpec, record, backend: Backend, rng=None) -> LandmarkSet:
    """Run one ensemble member on one image; output is in native coordinates."""
    if backend.name != spec.backend:
        raise ConfigError(f"{spec.tag}: member wants backend {spec.backend}, got {backend.name}")
    return backend.predict(spec, record, rng)


__all__ = [
    "BACKENDS",
    "PYRAMID",
    "ROSTER",
    "Backend",
    "EnsembleSpec",
    "ExternalBackend",
    "HeatmapBackend",
    "OracleBackend",
    "PredictorSpec",
    "TemplateBackend",
    "TemplateBank",
    "default_ensemble",
    "ncc_windows",
    "oracle_predict",
    "predict",
    "template_predict",
    "template_train",
]
