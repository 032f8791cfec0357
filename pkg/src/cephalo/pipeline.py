"""The end-to-end commands behind the CLI.

Every command reads a ``PipelineConfig`` and writes files under
``config.out``. Randomness comes from ``derive_rng(seed, ...)`` keyed by
image and member, so outputs do not depend on ``jobs``.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import replace
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import PipelineConfig
from .core import (
    DatasetManifest,
    ImageMeta,
    ImageRecord,
    ManifestEntry,
    atomic_write_text,
    institution_for_spacing,
    merge_annotations,
    normalize_intensities,
    read_landmark_csv,
    write_landmark_csv,
)
from .dataset import ImageLoader, load_manifest, save_manifest
from .errors import ConfigError, DataError
from .fusion import PredictionBundle, fuse_bundle
from .heatmap import encode, write_hmap
from .metrics import evaluate, per_landmark_svg, report_csv, report_tables, results_json
from .mha import header_for, record_from_mha, write_mha, write_packed
from .predictors import (
    ExternalBackend,
    OracleBackend,
    TemplateBackend,
    predict,
    template_train,
)
from .rng import derive_rng
from .simulate import noise_profile, simulate
from .synth import assign_splits, synth_dataset
from .transforms import apply_chain, policy_for_augmentation, resize_points, sample_policy

log = logging.getLogger("cephalo")

PACKED_NAME = "images.mha"
GT_NAME = "ground_truth.csv"
FUSED_TAG = "fused"


def _map(config, fn, items):
    items = list(items)
    jobs = int(config["jobs"])
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _write_dataset(records, manifest, out) -> DatasetManifest:
    os.makedirs(out, exist_ok=True)
    write_packed(records, os.path.join(out, PACKED_NAME))
    entries = [
        ManifestEntry(e.meta, e.landmarks, e.split, PACKED_NAME, i)
        for i, e in enumerate(manifest.entries)
    ]
    packed = DatasetManifest(entries, manifest.landmark_count, os.path.abspath(out))
    save_manifest(packed, os.path.join(out, "manifest.json"))
    write_landmark_csv(packed.ground_truth(), os.path.join(out, GT_NAME))
    return packed


def cmd_synth(config: PipelineConfig) -> DatasetManifest:
    """Generate a seeded blob dataset (and optionally ground-truth heatmaps)."""
    s = config["synth"]
    records, manifest = synth_dataset(int(s["n_images"]), int(s["k_landmarks"]), config.seed)
    packed = _write_dataset(records, manifest, config.out)
    if s.get("export_heatmaps"):
        for member in config.ensemble.members:
            d = os.path.join(config.heatmap_dir, member.tag)
            os.makedirs(d, exist_ok=True)
            w, h = member.resolution
            for e in packed.entries:
                pts = resize_points(e.landmarks.points, (e.meta.width, e.meta.height), (w, h))
                stack = encode(e.landmarks.replace(points=pts), w, h, float(config["sigma"]))
                write_hmap(stack, os.path.join(d, f"{e.meta.image_id}.hmap"))
    log.info("synth: wrote %d images to %s", len(packed.entries), config.out)
    return packed


def _read_image(path, spacing, fallback):
    """``spacing`` (per-image meta) beats the MHA header, which beats ``fallback``."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".mha":
        return record_from_mha(path, spacing=spacing)
    from PIL import Image

    s = spacing if spacing is not None else fallback
    if s is None:
        raise ConfigError(f"{path}: raster images carry no spacing; pass --spacing or a meta entry")
    try:
        with Image.open(path) as im:
            raw = np.asarray(im.convert("I;16") if im.mode in ("I", "I;16") else im.convert("L"))
    except OSError as exc:
        raise DataError(f"unreadable image {path}: {exc}") from None
    iid = os.path.splitext(os.path.basename(path))[0]
    h, w = raw.shape
    s = float(s)
    return ImageRecord(ImageMeta(iid, s, w, h, institution_for_spacing(s)), normalize_intensities(raw))


def cmd_ingest(config: PipelineConfig, images, annotations, spacing=None, meta=None) -> DatasetManifest:
    """Pack raw images with one or two annotators' landmarks into a dataset.

    ``meta`` optionally maps image_id to ``{"spacing": .., "split": ..}``.
    """
    if not images:
        raise DataError("ingest needs at least one image")
    if len(annotations) not in (1, 2):
        raise DataError("ingest takes one or two annotation CSVs")
    k = int(config["landmark_count"])
    meta = meta or {}
    records = []
    for path in images:
        iid = os.path.splitext(os.path.basename(path))[0]
        rec = _read_image(path, meta.get(iid, {}).get("spacing"), spacing)
        records.append(rec)
    sets = [read_landmark_csv(p, k) for p in annotations]
    ids = [r.meta.image_id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError("image ids (file stems) must be unique")
    splits = assign_splits(ids, config.seed)
    entries = []
    for rec in records:
        iid = rec.meta.image_id
        found = [s.get(iid) for s in sets]
        if any(f is None for f in found):
            raise DataError(f"no annotation for image {iid}")
        if len(found) == 2:
            if set(sets[0]) != set(sets[1]):
                raise DataError("annotator files cover different images")
            gt = merge_annotations(*found)
        else:
            gt = found[0].replace(confidence=None)
        split = meta.get(iid, {}).get("split", splits[iid])
        entries.append(ManifestEntry(rec.meta, gt, split))
    return _write_dataset(records, DatasetManifest(entries, k), config.out)


def _member_seed_rng(config, member, iid):
    return derive_rng(config.seed, "predict", member.tag, iid)


def _train_banks(config, manifest, loader, members):
    t = config["template"]
    train = manifest.split("train") or list(manifest.entries)
    samples = [(loader.load(e), e.landmarks) for e in train]
    bank_dir = os.path.join(config.out, "templates")
    os.makedirs(bank_dir, exist_ok=True)
    banks = {}
    for m in members:
        patch_side = int(m.params.get("patch_side", t["patch_side"]))
        banks[m.tag] = template_train(samples, m, patch_side)
        banks[m.tag].save(os.path.join(bank_dir, m.tag))
    return banks


def _backend_for(config, manifest, loader, members):
    name = config["backend"]
    if name == "oracle":
        o = config["oracle"]
        return OracleBackend(manifest.ground_truth(), float(o["noise_sigma"]), o["mode"])
    if name == "external":
        return ExternalBackend(config.heatmap_dir, manifest.landmark_count)
    banks = _train_banks(config, manifest, loader, members)
    return TemplateBackend(banks, config["template"]["search_radius"])


def cmd_predict(config: PipelineConfig) -> dict:
    """Run every ensemble member on every manifest image; one CSV per member."""
    manifest = load_manifest(config.manifest_path)
    loader = ImageLoader(manifest)
    members = [replace(m, backend=config["backend"]) for m in config.ensemble.members]
    backend = _backend_for(config, manifest, loader, members)
    needs_pixels = config["backend"] == "template"
    entries = list(manifest.entries)
    records = {}
    if needs_pixels:
        for e, rec in zip(entries, _map(config, loader.load, entries)):
            records[e.meta.image_id] = rec

    def run(task):
        member, entry = task
        # oracle and external members only look at the metadata
        record = records.get(entry.meta.image_id, entry)
        try:
            return predict(member, record, backend, _member_seed_rng(config, member, entry.meta.image_id))
        except (DataError, FileNotFoundError) as exc:
            raise DataError(f"member {member.tag}: {exc}") from exc

    tasks = [(m, e) for m in members for e in entries]
    outputs = _map(config, run, tasks)
    os.makedirs(config.predictions_dir, exist_ok=True)
    per_member = {}
    for (m, e), ls in zip(tasks, outputs):
        per_member.setdefault(m.tag, {})[e.meta.image_id] = ls
    for tag, sets in per_member.items():
        write_landmark_csv(sets, os.path.join(config.predictions_dir, f"{tag}.csv"))
    log.info("predict: %d members x %d images", len(members), len(entries))
    return per_member


def load_member_predictions(config, k) -> dict:
    out = {}
    for tag in config.ensemble.tags:
        path = os.path.join(config.predictions_dir, f"{tag}.csv")
        if not os.path.exists(path):
            raise DataError(f"missing predictions for member {tag}: {path}")
        out[tag] = read_landmark_csv(path, k)
    return out


def fuse_member_sets(tags, member_sets: dict, drop=1) -> dict:
    """Fuse ``{tag: {image_id: LandmarkSet}}`` in the given member order."""
    ids = sorted(set().union(*(member_sets[t].keys() for t in tags)))
    fused = {}
    for iid in ids:
        missing = [t for t in tags if iid not in member_sets[t]]
        if missing:
            raise DataError(f"image {iid} missing from members {missing}")
        bundle = PredictionBundle.from_sets(tags, [member_sets[t][iid] for t in tags])
        fused[iid] = fuse_bundle(bundle, drop)
    return fused


def cmd_fuse(config: PipelineConfig) -> dict:
    manifest = load_manifest(config.manifest_path)
    member_sets = load_member_predictions(config, manifest.landmark_count)
    fused = fuse_member_sets(config.ensemble.tags, member_sets, int(config["drop"]))
    write_landmark_csv(fused, os.path.join(config.predictions_dir, f"{FUSED_TAG}.csv"))
    return fused


def _evaluate_all(config):
    manifest = load_manifest(config.manifest_path)
    k = manifest.landmark_count
    member_sets = load_member_predictions(config, k)
    fused_path = os.path.join(config.predictions_dir, f"{FUSED_TAG}.csv")
    if not os.path.exists(fused_path):
        raise DataError(f"missing fused predictions {fused_path}; run 'fuse' first")
    split = config["eval_split"]
    results = {}
    for member in config.ensemble.members:
        results[member.tag] = evaluate(member_sets[member.tag], manifest, config.metrics, split)
    results[FUSED_TAG] = evaluate(read_landmark_csv(fused_path, k), manifest, config.metrics, split)
    return results


def _labelled(config, results):
    labels = {m.tag: f"{m.tag} ({m.resolution[0]}x{m.resolution[1]})" for m in config.ensemble.members}
    return {labels.get(tag, tag): res for tag, res in results.items()}


def cmd_evaluate(config: PipelineConfig) -> dict:
    results = _evaluate_all(config)
    atomic_write_text(os.path.join(config.out, "results.json"), results_json(results))
    return results


def cmd_report(config: PipelineConfig) -> dict:
    """Resolution-comparison table (text + CSV), per-landmark SVG and JSON."""
    results = _evaluate_all(config)
    labelled = _labelled(config, results)
    title = f"Comparison of ensemble members and fusion (split: {config['eval_split']})"
    atomic_write_text(os.path.join(config.out, "report.txt"), report_tables(labelled, title))
    atomic_write_text(os.path.join(config.out, "report.csv"), report_csv(labelled))
    atomic_write_text(os.path.join(config.out, "results.json"), results_json(results))
    series = {tag: res.per_landmark_mre for tag, res in results.items() if tag != FUSED_TAG}
    svg = per_landmark_svg(series, results[FUSED_TAG].per_landmark_mre,
                           "Per-landmark radial error per member")
    atomic_write_text(os.path.join(config.out, "per_landmark.svg"), svg)
    return results


def cmd_simulate(config: PipelineConfig):
    """Oracle-ensemble Monte Carlo: per-member vs fused error."""
    s = config["simulate"]
    n_members = len(config.ensemble.members)
    k = int(s["k_landmarks"])
    lo, hi = (float(v) for v in s["sigma_range"])
    sigmas = noise_profile(s["profile"], n_members, k, config.seed, lo, hi)
    tags = config.ensemble.tags
    sim = simulate(int(s["trials"]), sigmas, config.seed, config["oracle"]["mode"], tags, int(config["drop"]))
    results = sim.results(config.metrics)
    os.makedirs(config.out, exist_ok=True)
    title = f"Oracle ensemble simulation ({s['profile']} noise, {s['trials']} images)"
    text = report_tables(results, title)
    mean_member = float(sim.member_mre.mean())
    text += (f"mean member MRE {mean_member:.4f} mm, fused MRE {sim.fused_mre:.4f} mm, "
             f"reduction {100 * (1 - sim.fused_mre / mean_member):.2f}%\n")
    atomic_write_text(os.path.join(config.out, "simulate.txt"), text)
    doc = {
        "profile": s["profile"],
        "trials": int(s["trials"]),
        "sigmas_px": sim.sigmas.tolist(),
        "member_mre_mm": dict(zip(sim.tags, sim.member_mre.tolist())),
        "fused_mre_mm": sim.fused_mre,
        "results": json.loads(results_json(results)),
    }
    atomic_write_text(os.path.join(config.out, "simulate.json"), json.dumps(doc, indent=1) + "\n")
    series = {tag: res.per_landmark_mre for tag, res in results.items() if tag != FUSED_TAG}
    svg = per_landmark_svg(series, results[FUSED_TAG].per_landmark_mre,
                           "Simulated per-landmark radial error per member")
    atomic_write_text(os.path.join(config.out, "simulate.svg"), svg)
    return sim


def cmd_augment_preview(config: PipelineConfig, image_ids=None):
    """Apply each member's augmentation family to a few images and save them."""
    manifest = load_manifest(config.manifest_path)
    loader = ImageLoader(manifest)
    if image_ids:
        unknown = [i for i in image_ids if i not in manifest.by_id]
        if unknown:
            raise DataError(f"unknown image ids: {unknown}")
        entries = [manifest.by_id[i] for i in image_ids]
    else:
        entries = list(manifest.entries)[: int(config["preview"]["count"])]
    out = os.path.join(config.out, "preview")
    os.makedirs(out, exist_ok=True)
    landmarks, chains = {}, {}
    for e in entries:
        rec = loader.load(e)
        for m in config.ensemble.members:
            policy = policy_for_augmentation(m.augmentation, config.augment)
            rng = derive_rng(policy.seed, "augment", e.meta.image_id, m.tag)
            chain = sample_policy(policy, rng, rec.pixels.shape)
            img, ls = apply_chain(chain, rec.pixels, e.landmarks)
            key = f"{e.meta.image_id}__{m.tag}"
            data = img.astype(np.float32)
            write_mha(header_for(data, (e.meta.spacing_mm_per_px,) * 2), data, os.path.join(out, f"{key}.mha"))
            landmarks[key] = ls
            chains[key] = chain.to_dict()
    write_landmark_csv(landmarks, os.path.join(out, "landmarks.csv"))
    atomic_write_text(os.path.join(out, "chains.json"), json.dumps(chains, indent=1, sort_keys=True) + "\n")
    return chains
