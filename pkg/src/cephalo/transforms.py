"""Geometric and photometric augmentation with exact landmark tracking.

Every step exposes three things: the output shape for a given input shape,
an image transform and a forward point map. Images are ``(H, W)`` float
arrays, points are ``(K, 2)`` arrays of ``(x, y)``. Landmarks pushed outside
the frame become invisible and stay invisible.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .core import LandmarkSet
from .errors import ConfigError

DEFAULT_PAD = 100


def inside(points: np.ndarray, shape) -> np.ndarray:
    """Points whose pixel footprint lies in an ``(H, W)`` frame."""
    h, w = shape
    x, y = points[:, 0], points[:, 1]
    with np.errstate(invalid="ignore"):
        return (x >= -0.5) & (x < w - 0.5) & (y >= -0.5) & (y < h - 0.5)


def _bilinear(image, rows, cols):
    # zero fill that fades in across the half pixel beyond the edge centres,
    # so a peak on the last row/column stays where the point map puts it
    return ndimage.map_coordinates(image, [rows, cols], order=1, mode="grid-constant", cval=0.0)


@dataclass(frozen=True)
class Pad:
    margin: int

    def __post_init__(self):
        if self.margin < 0:
            raise ConfigError("pad margin must be >= 0")

    def output_shape(self, shape):
        return (shape[0] + 2 * self.margin, shape[1] + 2 * self.margin)

    def apply_image(self, image):
        if self.margin == 0:
            return image.copy()
        return np.pad(image, self.margin, mode="constant", constant_values=0.0)

    def map_points(self, points, shape):
        return points + self.margin


@dataclass(frozen=True)
class Rotate:
    """Rotate by ``angle`` degrees about ``center`` (image centre if None).

    Points map as ``c + R (p - c)`` with ``R = [[cos, -sin], [sin, cos]]`` in
    the y-down pixel frame.
    """

    angle: float
    center: tuple | None = None

    def __post_init__(self):
        if not math.isfinite(self.angle):
            raise ConfigError("rotation angle must be finite")

    def _center(self, shape):
        if self.center is None:
            return ((shape[1] - 1) / 2.0, (shape[0] - 1) / 2.0)
        cx, cy = self.center
        if not (0 <= cx <= shape[1] - 1 and 0 <= cy <= shape[0] - 1):
            raise ConfigError(f"rotation centre {self.center} outside image {shape}")
        return (float(cx), float(cy))

    def _matrix(self):
        t = math.radians(self.angle)
        return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])

    def output_shape(self, shape):
        return tuple(shape)

    def apply_image(self, image):
        if self.angle == 0:
            return image.copy()
        cx, cy = self._center(image.shape)
        r = self._matrix()
        rows, cols = np.indices(image.shape, dtype=np.float64)
        qx, qy = cols - cx, rows - cy
        # inverse map: p = c + R^T (q - c)
        px = r[0, 0] * qx + r[1, 0] * qy + cx
        py = r[0, 1] * qx + r[1, 1] * qy + cy
        return _bilinear(image, py, px)

    def map_points(self, points, shape):
        if self.angle == 0:
            return points.copy()
        c = np.array(self._center(shape))
        return (points - c) @ self._matrix().T + c


@dataclass(frozen=True)
class ShiftCrop:
    """Translate content by integer ``(dx, dy)``, then keep ``crop`` = (x0, y0, w, h)."""

    dx: int
    dy: int
    crop: tuple

    def __post_init__(self):
        x0, y0, w, h = self.crop
        if w < 1 or h < 1:
            raise ConfigError(f"degenerate crop window {self.crop}")
        for v in (self.dx, self.dy, *self.crop):
            if int(v) != v:
                raise ConfigError("shift and crop values must be integers")

    def output_shape(self, shape):
        return (int(self.crop[3]), int(self.crop[2]))

    def apply_image(self, image):
        x0, y0, w, h = (int(v) for v in self.crop)
        out = np.zeros((h, w), dtype=image.dtype)
        # output (j, i) reads input (j + y0 - dy, i + x0 - dx)
        sx, sy = x0 - int(self.dx), y0 - int(self.dy)
        H, W = image.shape
        i0, i1 = max(0, -sx), min(w, W - sx)
        j0, j1 = max(0, -sy), min(h, H - sy)
        if i1 > i0 and j1 > j0:
            out[j0:j1, i0:i1] = image[j0 + sy : j1 + sy, i0 + sx : i1 + sx]
        return out

    def map_points(self, points, shape):
        return points + np.array([self.dx - self.crop[0], self.dy - self.crop[1]], dtype=float)


@dataclass(frozen=True)
class Brightness:
    factor: float

    def __post_init__(self):
        if not (math.isfinite(self.factor) and self.factor > 0):
            raise ConfigError("brightness factor must be positive")

    def output_shape(self, shape):
        return tuple(shape)

    def apply_image(self, image):
        if self.factor == 1:
            return image.copy()
        return np.clip(image * self.factor, 0.0, 1.0)

    def map_points(self, points, shape):
        return points.copy()


@dataclass(frozen=True)
class Resize:
    """Per-axis bilinear rescale to ``width`` x ``height``; ``x' = x * width / W``."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"resize target must be >= 1, got {self.width}x{self.height}")

    def output_shape(self, shape):
        return (self.height, self.width)

    def apply_image(self, image):
        H, W = image.shape
        if (H, W) == (self.height, self.width):
            return image.copy()
        rows = np.arange(self.height, dtype=np.float64) * (H / self.height)
        cols = np.arange(self.width, dtype=np.float64) * (W / self.width)
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        return _bilinear(image, rr, cc)

    def map_points(self, points, shape):
        H, W = shape
        return points * np.array([self.width / W, self.height / H])

    def inverse_points(self, points, shape):
        H, W = shape
        return points / np.array([self.width / W, self.height / H])


def resize_points(points, src_wh, dst_wh):
    """Map ``(x, y)`` points between two resolutions of the same image."""
    return np.asarray(points, float) * np.array([dst_wh[0] / src_wh[0], dst_wh[1] / src_wh[1]])


@dataclass(frozen=True)
class TransformChain:
    steps: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __iter__(self):
        return iter(self.steps)

    def __len__(self):
        return len(self.steps)

    def then(self, *steps) -> "TransformChain":
        return TransformChain(self.steps + steps)

    def output_shape(self, shape):
        for s in self.steps:
            shape = s.output_shape(shape)
        return tuple(shape)

    def map_points(self, points, shape):
        """Composite forward map; returns ``(points, still_inside)``."""
        pts = np.asarray(points, dtype=np.float64)
        ok = np.ones(len(pts), bool)
        for s in self.steps:
            pts = s.map_points(pts, shape)
            shape = s.output_shape(shape)
            ok &= inside(pts, shape)
        return pts, ok

    def apply_image(self, image):
        out = np.asarray(image, dtype=np.float64)
        for s in self.steps:
            out = s.apply_image(out)
        return out

    def to_dict(self):
        return [{"op": type(s).__name__, **asdict(s)} for s in self.steps]


_STEP_TYPES = {cls.__name__: cls for cls in (Pad, Rotate, ShiftCrop, Brightness, Resize)}


def chain_from_dict(items) -> TransformChain:
    steps = []
    for item in items:
        item = dict(item)
        cls = _STEP_TYPES[item.pop("op")]
        for key in ("center", "crop"):
            if item.get(key) is not None:
                item[key] = tuple(item[key])
        steps.append(cls(**item))
    return TransformChain(steps)


def pad(image, landmarks, margin):
    return apply_chain(TransformChain([Pad(margin)]), image, landmarks)


def rotate(image, landmarks, angle_deg, center=None):
    return apply_chain(TransformChain([Rotate(angle_deg, center)]), image, landmarks)


def shift_crop(image, landmarks, dx, dy, crop_rect):
    return apply_chain(TransformChain([ShiftCrop(dx, dy, tuple(crop_rect))]), image, landmarks)


def brightness(image, factor):
    return Brightness(factor).apply_image(np.asarray(image, dtype=np.float64))


def resize(image, landmarks, target_w, target_h):
    return apply_chain(TransformChain([Resize(target_w, target_h)]), image, landmarks)


def apply_chain(chain: TransformChain, image, landmarks: LandmarkSet):
    """Apply every step in order to the image and the landmarks."""
    image = np.asarray(image, dtype=np.float64)
    pts, ok = chain.map_points(landmarks.points, image.shape)
    vis = landmarks.visible & ok
    pts = np.where(vis[:, None], pts, np.nan)
    return chain.apply_image(image), landmarks.replace(points=pts, visible=vis)


def _interval(value, name):
    lo, hi = (float(v) for v in value)
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ConfigError(f"{name} must be an interval [lo, hi], got {value}")
    return (lo, hi)


@dataclass(frozen=True)
class AugmentPolicy:
    """Random augmentation ranges.

    ``rotation_deg`` and ``shift_frac`` are symmetric half-widths; zero
    disables them. ``crop_scale`` is the side fraction kept by the crop and
    ``brightness`` a multiplicative factor interval.
    """

    pad_margin: int = DEFAULT_PAD
    rotation_deg: float = 15.0
    shift_frac: float = 0.1
    crop_scale: tuple = (0.9, 1.0)
    brightness: tuple = (0.7, 1.3)
    seed: int = 0

    def __post_init__(self):
        if self.pad_margin < 0:
            raise ConfigError("pad_margin must be >= 0")
        if self.rotation_deg < 0 or self.shift_frac < 0:
            raise ConfigError("rotation_deg and shift_frac are half-widths and must be >= 0")
        lo, hi = _interval(self.crop_scale, "crop_scale")
        if lo <= 0 or hi > 1:
            raise ConfigError("crop_scale must lie in (0, 1]")
        blo, bhi = _interval(self.brightness, "brightness")
        if blo <= 0:
            raise ConfigError("brightness factors must be positive")
        object.__setattr__(self, "crop_scale", (lo, hi))
        object.__setattr__(self, "brightness", (blo, bhi))

    @property
    def rotation_enabled(self):
        return self.rotation_deg > 0

    @property
    def shift_crop_enabled(self):
        return self.shift_frac > 0 or self.crop_scale != (1.0, 1.0)

    @property
    def brightness_enabled(self):
        return self.brightness != (1.0, 1.0)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "AugmentPolicy":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown augment policy keys: {sorted(extra)}")
        d = dict(d)
        for key in ("crop_scale", "brightness"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "AugmentPolicy":
        return cls.from_dict(json.loads(text))


IDENTITY_POLICY = AugmentPolicy(rotation_deg=0.0, shift_frac=0.0, crop_scale=(1.0, 1.0), brightness=(1.0, 1.0))


def policy_for_augmentation(kind: str, base: AugmentPolicy | None = None) -> AugmentPolicy:
    """Restrict a policy to one augmentation family of the model roster."""
    base = base or AugmentPolicy()
    off = dict(rotation_deg=0.0, shift_frac=0.0, crop_scale=(1.0, 1.0), brightness=(1.0, 1.0))
    keep = {
        "none": (),
        "brightness": ("brightness",),
        "rotation": ("rotation_deg",),
        "shift_crop": ("shift_frac", "crop_scale"),
    }
    if kind not in keep:
        raise ConfigError(f"unknown augmentation {kind!r}")
    d = asdict(base)
    for key, value in off.items():
        if key not in keep[kind]:
            d[key] = value
    return AugmentPolicy(**d)


def sample_policy(policy: AugmentPolicy, rng: np.random.Generator, shape) -> TransformChain:
    """Draw one random chain for an image of ``(H, W)`` shape.

    A ``Pad`` step always precedes rotation and shift/crop so landmarks near
    the border survive them.
    """
    steps = []
    h, w = shape
    if policy.rotation_enabled or policy.shift_crop_enabled:
        steps.append(Pad(policy.pad_margin))
        h, w = h + 2 * policy.pad_margin, w + 2 * policy.pad_margin
    if policy.rotation_enabled:
        steps.append(Rotate(float(rng.uniform(-policy.rotation_deg, policy.rotation_deg))))
    if policy.shift_crop_enabled:
        dx = int(round(rng.uniform(-policy.shift_frac, policy.shift_frac) * w))
        dy = int(round(rng.uniform(-policy.shift_frac, policy.shift_frac) * h))
        scale = float(rng.uniform(*policy.crop_scale))
        cw, ch = max(1, int(round(scale * w))), max(1, int(round(scale * h)))
        x0 = int(rng.integers(0, w - cw + 1))
        y0 = int(rng.integers(0, h - ch + 1))
        steps.append(ShiftCrop(dx, dy, (x0, y0, cw, ch)))
    if policy.brightness_enabled:
        steps.append(Brightness(float(rng.uniform(*policy.brightness))))
    return TransformChain(steps)
