"""Per-landmark ensemble fusion: softmax, drop the least confident, average the rest."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LandmarkSet
from .errors import ConfigError, DataError


def softmax(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DataError("softmax expects a non-empty 1-D array")
    if not np.all(np.isfinite(v)):
        raise DataError("softmax input must be finite")
    e = np.exp(v - v.max())
    return e / e.sum()


def _mean(points):
    # anchored at the first point: identical inputs average to themselves exactly
    return points[0] + (points - points[0]).mean(axis=0)


def drop_order(confidences, drop: int = 1) -> np.ndarray:
    """Indices of the ``drop`` least confident members, earliest first on ties."""
    c = np.asarray(confidences, dtype=np.float64)
    # stable sort keeps roster order among equal confidences
    return np.argsort(c, kind="stable")[:drop]


def fuse_landmark(points, confidences, drop: int = 1):
    """Fuse N predictions of one landmark.

    The softmax is strictly monotone, so the member dropped is chosen on the
    raw confidences; this keeps the choice exact where the normalised values
    would underflow to a tie. Returns ``(point, mean retained softmax)``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    conf = np.asarray(confidences, dtype=np.float64)
    n = len(pts)
    if n < 2 or conf.shape != (n,):
        raise DataError(f"need >= 2 predictions with one confidence each, got {n}")
    if not 0 <= drop < n:
        raise ConfigError(f"cannot drop {drop} of {n} predictions")
    norm = softmax(conf)
    keep = np.ones(n, bool)
    keep[drop_order(conf, drop)] = False
    return _mean(pts[keep]), float(norm[keep].mean())


@dataclass(frozen=True, eq=False)
class PredictionBundle:
    """Predictions of N ensemble members for one image.

    ``points`` is ``(N, K, 2)``; ``confidence`` and ``visible`` are ``(N, K)``.
    """

    model_tags: tuple
    points: np.ndarray
    confidence: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        tags = tuple(self.model_tags)
        object.__setattr__(self, "model_tags", tags)
        n = len(tags)
        if n < 2:
            raise DataError("a prediction bundle needs at least two members")
        if len(set(tags)) != n:
            raise DataError("model tags must be unique")
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[0] != n or pts.shape[2] != 2:
            raise DataError(f"points must be (N, K, 2) with N={n}, got {pts.shape}")
        k = pts.shape[1]
        conf = np.asarray(self.confidence, dtype=np.float64)
        vis = np.asarray(self.visible, dtype=bool)
        if conf.shape != (n, k) or vis.shape != (n, k):
            raise DataError("confidence and visible must be (N, K)")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidence", conf)
        object.__setattr__(self, "visible", vis)

    @classmethod
    def from_sets(cls, tags, sets) -> "PredictionBundle":
        sets = list(sets)
        ks = {s.k for s in sets}
        if len(ks) != 1:
            raise DataError(f"members disagree on landmark count: {sorted(ks)}")
        k = ks.pop()
        conf = [s.confidence if s.confidence is not None else np.ones(k) for s in sets]
        return cls(tags, [s.points for s in sets], conf, [s.visible for s in sets])

    @property
    def n(self):
        return len(self.model_tags)

    @property
    def k(self):
        return self.points.shape[1]


def fuse_bundle(bundle: PredictionBundle, drop: int = 1) -> LandmarkSet:
    """Fuse every landmark of a bundle independently.

    Invisible members count as the least confident and are dropped first;
    a landmark seen by at most one member comes out invisible.
    """
    n, k = bundle.n, bundle.k
    pts = np.full((k, 2), np.nan)
    conf = np.zeros(k)
    vis = np.zeros(k, bool)
    for j in range(k):
        seen = bundle.visible[:, j]
        n_seen = int(seen.sum())
        if n_seen <= 1:
            continue
        n_missing = n - n_seen
        if n_missing == 0:
            pts[j], conf[j] = fuse_landmark(bundle.points[:, j], bundle.confidence[:, j], drop)
        else:
            # missing members use up the drop budget before confident ones
            rest = max(0, drop - n_missing)
            if n_seen - rest < 1:
                continue
            sub_pts = bundle.points[seen, j]
            sub_conf = bundle.confidence[seen, j]
            if rest == 0:
                norm = softmax(sub_conf)
                pts[j], conf[j] = _mean(sub_pts), float(norm.mean())
            else:
                pts[j], conf[j] = fuse_landmark(sub_pts, sub_conf, rest)
        vis[j] = True
    return LandmarkSet(pts, vis, conf)
