"""Multi-resolution cephalometric landmark pipeline.

Augmentation with exact landmark tracking, image-pyramid inference over
pluggable predictor backends, Gaussian heatmap coding, drop-lowest ensemble
fusion and MRE/SDR evaluation.
"""

from .core import (
    DatasetManifest,
    ImageMeta,
    ImageRecord,
    LandmarkSet,
    ManifestEntry,
    merge_annotations,
    read_landmark_csv,
    write_landmark_csv,
)
from .errors import CephaloError, ConfigError, DataError, InvariantError, ParseError
from .fusion import PredictionBundle, fuse_bundle, fuse_landmark, softmax
from .heatmap import HeatmapStack, decode, decode_to_native, encode, read_hmap, write_hmap
from .metrics import MetricConfig, evaluate, mre, radial_error, report_tables, sdr
from .mha import MhaHeader, pack_to_common_canvas, read_mha, write_mha
from .predictors import EnsembleSpec, PredictorSpec, default_ensemble, oracle_predict, predict
from .transforms import AugmentPolicy, TransformChain, apply_chain, sample_policy

__version__ = "0.1.0"

__all__ = [
    "AugmentPolicy",
    "CephaloError",
    "ConfigError",
    "DataError",
    "DatasetManifest",
    "EnsembleSpec",
    "HeatmapStack",
    "ImageMeta",
    "ImageRecord",
    "InvariantError",
    "LandmarkSet",
    "ManifestEntry",
    "MetricConfig",
    "MhaHeader",
    "ParseError",
    "PredictionBundle",
    "PredictorSpec",
    "TransformChain",
    "apply_chain",
    "decode",
    "decode_to_native",
    "default_ensemble",
    "encode",
    "evaluate",
    "fuse_bundle",
    "fuse_landmark",
    "merge_annotations",
    "mre",
    "oracle_predict",
    "pack_to_common_canvas",
    "predict",
    "radial_error",
    "read_hmap",
    "read_landmark_csv",
    "read_mha",
    "report_tables",
    "sample_policy",
    "sdr",
    "softmax",
    "write_hmap",
    "write_landmark_csv",
    "write_mha",
]
