"""Command-line entry point: ``cephalo <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import pipeline
from .config import load_config
from .errors import ConfigError, DataError, InvariantError
from .metrics import report_tables

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("cephalo")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=_u64)
    common.add_argument("--backend", choices=["external", "template", "oracle"])
    common.add_argument("--out", help="working/output directory")
    common.add_argument("--resolutions", type=_int_list, help="pyramid sizes, e.g. 512,800,1024,1280,1408")
    common.add_argument("--members", type=_str_list, help="subset of member tags, roster order kept")
    common.add_argument("--manifest", help="dataset manifest (default <out>/manifest.json)")
    common.add_argument("--jobs", type=int, help="worker threads")

    parser = argparse.ArgumentParser(prog="cephalo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="pack images + annotations into a dataset")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--annotations", nargs="+", required=True, help="one or two annotator CSVs")
    p.add_argument("--spacing", type=float, help="mm/px for images without a spacing header")
    p.add_argument("--meta", help="JSON mapping image_id to {spacing, split}")
    p.add_argument("--landmarks", type=int, help="landmarks per image (default 38)")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic blob dataset")
    p.add_argument("--n-images", type=int)
    p.add_argument("--k-landmarks", type=int)
    p.add_argument("--export-heatmaps", action="store_true", help="also write ground-truth HMAP tensors")

    p = sub.add_parser("augment-preview", parents=[common], help="save augmented samples per member")
    p.add_argument("--image-id", action="append", dest="image_ids")

    p = sub.add_parser("predict", parents=[common], help="run every ensemble member")
    p.add_argument("--noise-sigma", type=float, help="oracle noise (px)")
    p.add_argument("--search-radius", type=int, help="template search radius (px at model res)")

    sub.add_parser("fuse", parents=[common], help="fuse member predictions")

    for name in ("evaluate", "report"):
        p = sub.add_parser(name, parents=[common], help=f"{name} predictions against ground truth")
        p.add_argument("--split", help="train, val, test or all")

    p = sub.add_parser("simulate", parents=[common], help="oracle-ensemble fusion Monte Carlo")
    p.add_argument("--trials", type=int)
    p.add_argument("--profile", choices=["uniform", "equal", "preference", "one-exact"])
    p.add_argument("--k-landmarks", type=int)
    return parser


def overrides_from_args(args) -> dict:
    o = {}
    for key in ("seed", "backend", "out", "resolutions", "members", "manifest", "jobs"):
        v = getattr(args, key, None)
        if v is not None:
            o[key] = v
    if getattr(args, "landmarks", None) is not None:
        o["landmark_count"] = args.landmarks
    synth = {}
    if getattr(args, "n_images", None) is not None:
        synth["n_images"] = args.n_images
    if args.command == "synth" and args.k_landmarks is not None:
        synth["k_landmarks"] = args.k_landmarks
    if getattr(args, "export_heatmaps", False):
        synth["export_heatmaps"] = True
    if synth:
        o["synth"] = synth
    if getattr(args, "noise_sigma", None) is not None:
        o["oracle"] = {"noise_sigma": args.noise_sigma}
    if getattr(args, "search_radius", None) is not None:
        o["template"] = {"search_radius": args.search_radius}
    if getattr(args, "split", None) is not None:
        o["eval_split"] = args.split
    sim = {}
    if getattr(args, "trials", None) is not None:
        sim["trials"] = args.trials
    if getattr(args, "profile", None) is not None:
        sim["profile"] = args.profile
    if args.command == "simulate" and args.k_landmarks is not None:
        sim["k_landmarks"] = args.k_landmarks
    if sim:
        o["simulate"] = sim
    return o


def _setup_logging():
    level = os.environ.get("CEPHALO_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def run(args) -> None:
    config = load_config(args.config, overrides_from_args(args))
    cmd = args.command
    if cmd == "ingest":
        meta = None
        if args.meta:
            with open(args.meta, encoding="utf-8") as fh:
                meta = json.load(fh)
        pipeline.cmd_ingest(config, args.images, args.annotations, args.spacing, meta)
    elif cmd == "synth":
        pipeline.cmd_synth(config)
    elif cmd == "augment-preview":
        pipeline.cmd_augment_preview(config, args.image_ids)
    elif cmd == "predict":
        pipeline.cmd_predict(config)
    elif cmd == "fuse":
        pipeline.cmd_fuse(config)
    elif cmd == "evaluate":
        results = pipeline.cmd_evaluate(config)
        sys.stdout.write(report_tables(pipeline._labelled(config, results)))
    elif cmd == "report":
        pipeline.cmd_report(config)
        with open(os.path.join(config.out, "report.txt"), encoding="utf-8") as fh:
            sys.stdout.write(fh.read())
    elif cmd == "simulate":
        pipeline.cmd_simulate(config)
        with open(os.path.join(config.out, "simulate.txt"), encoding="utf-8") as fh:
            sys.stdout.write(fh.read())


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
