"""Radial error, MRE, SDR and the table/figure reports built on them."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from xml.sax.saxutils import escape

import numpy as np

from .core import atomic_write_text
from .errors import ConfigError, DataError

DEFAULT_THRESHOLDS = (2.0, 2.5, 3.0, 4.0)


def radial_error(pred, gt, spacing_mm_per_px: float) -> float:
    """Euclidean distance between two ``(x, y)`` points in millimetres."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(g)) and math.isfinite(spacing_mm_per_px)):
        raise DataError("radial_error inputs must be finite")
    if spacing_mm_per_px <= 0:
        raise DataError("spacing must be positive")
    return float(math.hypot(*(p - g)) * spacing_mm_per_px)


def mre(errors) -> float:
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise DataError("MRE of an empty error list")
    return float(e.mean())


def sdr(errors, threshold_mm: float) -> float:
    """Percentage of errors at or below the threshold."""
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise DataError("SDR of an empty error list")
    if not threshold_mm > 0:
        raise DataError("SDR threshold must be positive")
    return 100.0 * np.count_nonzero(e <= threshold_mm) / e.size


@dataclass(frozen=True)
class MetricConfig:
    sdr_thresholds_mm: tuple = DEFAULT_THRESHOLDS
    # None: missing predictions are left out of MRE and counted separately
    missing_penalty_mm: float | None = None

    def __post_init__(self):
        t = tuple(float(v) for v in self.sdr_thresholds_mm)
        if not t or any(v <= 0 for v in t) or any(b <= a for a, b in zip(t, t[1:])):
            raise ConfigError("SDR thresholds must be positive and strictly increasing")
        object.__setattr__(self, "sdr_thresholds_mm", t)
        if self.missing_penalty_mm is not None and not self.missing_penalty_mm >= 0:
            raise ConfigError("missing_penalty_mm must be >= 0")


@dataclass(frozen=True, eq=False)
class EvaluationResult:
    """``errors`` is ``(n_images, K)`` in mm; missing predictions hold ``inf``."""

    image_ids: tuple
    errors: np.ndarray
    config: MetricConfig = field(default_factory=MetricConfig)

    @property
    def n_missing(self) -> int:
        return int(np.count_nonzero(~np.isfinite(self.errors)))

    def _scored(self, e):
        finite = np.isfinite(e)
        if self.config.missing_penalty_mm is None:
            return e[finite]
        return np.where(finite, e, self.config.missing_penalty_mm)

    @property
    def mre(self) -> float:
        scored = self._scored(self.errors)
        return mre(scored) if scored.size else math.nan

    @property
    def sdr(self) -> dict:
        return {t: sdr(self.errors, t) for t in self.config.sdr_thresholds_mm}

    @property
    def per_landmark_mre(self) -> np.ndarray:
        out = []
        for col in self.errors.T:
            scored = self._scored(col)
            out.append(scored.mean() if scored.size else math.nan)
        return np.array(out)

    def to_dict(self) -> dict:
        return {
            "mre_mm": self.mre,
            "sdr_percent": {f"{t:g}": v for t, v in self.sdr.items()},
            "n_missing": self.n_missing,
            "per_landmark_mre_mm": [_json_float(v) for v in self.per_landmark_mre],
            "errors_mm": {
                iid: [_json_float(v) for v in row] for iid, row in zip(self.image_ids, self.errors)
            },
        }


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else None


def evaluate(predictions, manifest, config: MetricConfig | None = None, split="test"):
    """Score ``{image_id: LandmarkSet}`` against the manifest ground truth.

    Invisible predictions score ``inf``: they fail every SDR threshold and
    are handled in MRE per ``config.missing_penalty_mm``.
    """
    config = config or MetricConfig()
    entries = manifest.split(split)
    if not entries:
        raise DataError(f"no manifest entries in split {split!r}")
    ids, rows = [], []
    for entry in entries:
        iid = entry.meta.image_id
        if iid not in predictions:
            raise DataError(f"missing prediction for image {iid}")
        pred, gt = predictions[iid], entry.landmarks
        if pred.k != gt.k:
            raise DataError(f"{iid}: prediction has {pred.k} landmarks, ground truth {gt.k}")
        d = np.hypot(*(pred.points - gt.points).T) * entry.meta.spacing_mm_per_px
        d = np.where(pred.visible, d, np.inf)
        ids.append(iid)
        rows.append(np.where(gt.visible, d, np.nan))
    errors = np.array(rows)
    if np.isnan(errors).any():
        raise DataError("ground truth contains unannotated landmarks")
    return EvaluationResult(tuple(ids), errors, config)


def round2(v: float) -> str:
    """Two decimals, ties to even on the shortest decimal form of ``v``."""
    if not math.isfinite(v):
        return "nan"
    return str(Decimal(repr(float(v))).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


def _table_rows(results):
    if not results:
        raise DataError("no results to report")
    thresholds = next(iter(results.values())).config.sdr_thresholds_mm
    header = ["Model", "MRE"] + [f"{t:g} mm" for t in thresholds]
    rows = []
    for tag, res in results.items():
        if res.config.sdr_thresholds_mm != thresholds:
            raise ConfigError("all results in one table must share thresholds")
        sd = res.sdr
        rows.append([tag, round2(res.mre)] + [round2(sd[t]) for t in thresholds])
    return header, rows


def report_tables(results, title=None) -> str:
    """Aligned text table, one row per configuration in the given order."""
    header, rows = _table_rows(results)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    out = io.StringIO()
    if title:
        out.write(title + "\n")
    line = "+".join("-" * (w + 2) for w in widths)
    out.write(line + "\n")

    def fmt(r):
        cells = [f" {r[0]:<{widths[0]}} "] + [f" {c:>{w}} " for c, w in zip(r[1:], widths[1:])]
        return "|".join(cells).rstrip() + "\n"

    out.write(fmt(header))
    out.write(line + "\n")
    for r in rows:
        out.write(fmt(r))
    out.write(line + "\n")
    missing = [(tag, res.n_missing) for tag, res in results.items() if res.n_missing]
    for tag, n in missing:
        penalty = results[tag].config.missing_penalty_mm
        how = "excluded from MRE" if penalty is None else f"scored {penalty:g} mm in MRE"
        out.write(f"{tag}: {n} missing predictions {how}\n")
    return out.getvalue()


def report_csv(results) -> str:
    header, rows = _table_rows(results)
    return "\n".join(",".join(r) for r in [header] + rows) + "\n"


def results_json(results) -> str:
    doc = {tag: res.to_dict() for tag, res in results.items()}
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


_ATTR = {'"': "&quot;"}
_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
            "#7f7f7f", "#bcbd22", "#17becf")


def per_landmark_svg(series, fused=None, title="Per-landmark radial error") -> str:
    """SVG line/scatter chart of per-landmark MRE; one series per model.

    ``series`` maps a model tag to a length-K vector. ``fused`` (optional) is
    drawn in black on top.
    """
    series = dict(series)
    if not series and fused is None:
        raise DataError("nothing to plot")
    all_series = list(series.items())
    if fused is not None:
        all_series.append(("fused", fused))
    k = len(all_series[0][1])
    vals = np.concatenate([np.asarray(v, float) for _, v in all_series])
    finite = vals[np.isfinite(vals)]
    ymax = float(finite.max()) if finite.size else 1.0
    ymax = ymax * 1.1 if ymax > 0 else 1.0

    W, H = 800, 420
    left, right, top, bottom = 60, 150, 40, 50
    pw, ph = W - left - right, H - top - bottom

    def sx(i):
        return left + (pw * (i + 0.5) / k)

    def sy(v):
        return top + ph * (1 - v / ymax)

    o = io.StringIO()
    o.write('<?xml version="1.0" encoding="UTF-8"?>\n')
    o.write(f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}">\n')
    o.write(f'<title>{escape(title)}</title>\n')
    o.write(f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>\n')
    o.write(f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>\n')
    o.write(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>\n')
    o.write(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>\n')
    step = max(1, k // 20)
    for i in range(0, k, step):
        o.write(f'<text x="{sx(i):.2f}" y="{top + ph + 16}" text-anchor="middle" '
                f'font-size="10">{i}</text>\n')
    for j in range(6):
        v = ymax * j / 5
        o.write(f'<text x="{left - 6}" y="{sy(v) + 3:.2f}" text-anchor="end" '
                f'font-size="10">{v:.2f}</text>\n')
    o.write(f'<text x="{left + pw / 2:.1f}" y="{H - 10}" text-anchor="middle" '
            f'font-size="12">landmark index</text>\n')
    o.write(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 16 {top + ph / 2:.1f})">radial error (mm)</text>\n')
    for n, (tag, values) in enumerate(all_series):
        is_fused = fused is not None and n == len(all_series) - 1
        color = "#000000" if is_fused else _PALETTE[n % len(_PALETTE)]
        values = np.asarray(values, float)
        o.write(f'<g class="series" data-label="{escape(tag, _ATTR)}" stroke="{color}" fill="{color}">\n')
        pts = [(sx(i), sy(v)) for i, v in enumerate(values) if np.isfinite(v)]
        if len(pts) > 1:
            path = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
            o.write(f'<polyline fill="none" stroke-width="{2 if is_fused else 1}" points="{path}"/>\n')
        for i, v in enumerate(values):
            if np.isfinite(v):
                o.write(f'<circle cx="{sx(i):.2f}" cy="{sy(v):.2f}" r="{3.5 if is_fused else 2.5}" '
                        f'data-landmark="{i}" data-value="{v:.3f}"/>\n')
        o.write("</g>\n")
        ly = top + 14 * n
        o.write(f'<rect x="{left + pw + 12}" y="{ly}" width="10" height="10" fill="{color}"/>\n')
        o.write(f'<text x="{left + pw + 28}" y="{ly + 9}" font-size="11">{escape(tag)}</text>\n')
    o.write("</svg>\n")
    return o.getvalue()


def plot_per_landmark(results, out_path, fused=None, title="Per-landmark radial error") -> None:
    """Write the per-landmark chart for ``{tag: EvaluationResult}`` (+ fused result)."""
    series = {tag: res.per_landmark_mre for tag, res in results.items()}
    fused_vals = fused.per_landmark_mre if fused is not None else None
    atomic_write_text(out_path, per_landmark_svg(series, fused_vals, title))
