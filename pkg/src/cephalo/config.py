"""Pipeline configuration: defaults < JSON file < command-line flags."""

from __future__ import annotations

import copy
import json
import os

from .errors import ConfigError
from .heatmap import DEFAULT_SIGMA
from .metrics import MetricConfig
from .predictors import BACKENDS, PYRAMID, EnsembleSpec, PredictorSpec, default_ensemble
from .rng import check_seed
from .transforms import AugmentPolicy

DEFAULTS = {
    "manifest": None,
    "out": "cephalo_out",
    "seed": 0,
    "backend": "oracle",
    "resolutions": list(PYRAMID),
    "members": None,
    "ensemble": None,
    "augment": {},
    "sigma": DEFAULT_SIGMA,
    "metrics": {"sdr_thresholds_mm": [2.0, 2.5, 3.0, 4.0], "missing_penalty_mm": None},
    "oracle": {"noise_sigma": 0.0, "mode": "informative"},
    "template": {"patch_side": 33, "search_radius": None},
    "heatmap_dir": None,
    "eval_split": "test",
    "drop": 1,
    "jobs": 1,
    "landmark_count": 38,
    "synth": {"n_images": 50, "k_landmarks": 38, "export_heatmaps": False},
    "simulate": {"trials": 500, "k_landmarks": 38, "profile": "uniform", "sigma_range": [1.0, 4.0]},
    "preview": {"count": 2},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


class PipelineConfig:
    """Resolved settings for one pipeline run."""

    def __init__(self, data: dict | None = None):
        data = _merge(DEFAULTS, data or {})
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        self.data = data
        self.seed = check_seed(data["seed"])
        if data["backend"] not in BACKENDS:
            raise ConfigError(f"unknown backend {data['backend']!r}")
        res = [int(r) for r in data["resolutions"]]
        if len(set(res)) != len(res) or any(r < 1 for r in res):
            raise ConfigError("resolutions must be unique and positive")
        self.resolutions = res
        try:
            self.augment = AugmentPolicy.from_dict({"seed": self.seed, **data["augment"]})
            self.metrics = MetricConfig(
                tuple(data["metrics"]["sdr_thresholds_mm"]), data["metrics"]["missing_penalty_mm"]
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if not float(data["sigma"]) > 0:
            raise ConfigError("codec sigma must be positive")
        if int(data["jobs"]) < 1:
            raise ConfigError("jobs must be >= 1")
        self.ensemble = self._ensemble()

    def __getitem__(self, key):
        return self.data[key]

    def _ensemble(self) -> EnsembleSpec:
        backend = self.data["backend"]
        if self.data["ensemble"]:
            ens = EnsembleSpec(
                [PredictorSpec.from_dict(m, backend=m.get("backend", backend)) for m in self.data["ensemble"]]
            )
        else:
            if len(self.resolutions) != len(PYRAMID):
                raise ConfigError(
                    f"the default roster needs {len(PYRAMID)} resolutions; "
                    "give an explicit 'ensemble' for other pyramids"
                )
            ens = default_ensemble(backend, self.resolutions)
        if self.data["members"]:
            ens = ens.select(self.data["members"])
        return ens

    @property
    def out(self) -> str:
        return self.data["out"]

    @property
    def manifest_path(self) -> str:
        return self.data["manifest"] or os.path.join(self.out, "manifest.json")

    @property
    def heatmap_dir(self) -> str:
        return self.data["heatmap_dir"] or os.path.join(self.out, "heatmaps")

    @property
    def predictions_dir(self) -> str:
        return os.path.join(self.out, "predictions")

    def to_dict(self):
        return copy.deepcopy(self.data)


def load_config(path=None, overrides=None) -> PipelineConfig:
    data = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    return PipelineConfig(_merge(data, overrides or {}))
