import json
import logging
import os

import numpy as np
import pytest
from PIL import Image

from cephalo import cli, pipeline
from cephalo.config import DEFAULTS, load_config
from cephalo.core import LandmarkSet, read_landmark_csv, write_landmark_csv
from cephalo.dataset import load_manifest
from cephalo.errors import ConfigError, InvariantError
from cephalo.mha import header_for, read_mha, write_mha
from cephalo.transforms import chain_from_dict

SMALL = ["--n-images", "8", "--k-landmarks", "5"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "run"
    assert run("synth", "--out", out, "--seed", 4, *SMALL) == 0
    return out


def test_synth_outputs(synth_dir):
    m = load_manifest(synth_dir / "manifest.json")
    assert len(m.entries) == 8 and m.landmark_count == 5
    assert {e.meta.spacing_mm_per_px for e in m.entries} <= {0.1, 0.125, 0.096}
    header, arr = read_mha(synth_dir / "images.mha")
    assert arr.shape[0] == 8
    assert arr.shape[1:] == (max(e.meta.height for e in m.entries), max(e.meta.width for e in m.entries))
    assert read_landmark_csv(synth_dir / "ground_truth.csv", 5) == m.ground_truth()


def test_oracle_pipeline_zero_error(synth_dir, capsys):
    common = ["--out", synth_dir, "--seed", 4]
    assert run("predict", *common, "--backend", "oracle", "--noise-sigma", 0) == 0
    gt = read_landmark_csv(synth_dir / "ground_truth.csv", 5)
    preds = sorted(os.listdir(synth_dir / "predictions"))
    assert len(preds) == 7
    for name in preds:
        got = read_landmark_csv(synth_dir / "predictions" / name, 5)
        assert {k: v.replace(confidence=None) for k, v in got.items()} == gt
    assert run("fuse", *common) == 0
    assert run("evaluate", *common, "--split", "all") == 0
    doc = json.loads((synth_dir / "results.json").read_text())
    assert list(doc) == [t for t, _, _ in __import__("cephalo").predictors.ROSTER] + ["fused"]
    for res in doc.values():
        assert res["mre_mm"] == 0.0
        assert all(v == 100.0 for v in res["sdr_percent"].values())
    capsys.readouterr()
    assert run("report", *common, "--split", "all") == 0
    text = capsys.readouterr().out
    assert text == (synth_dir / "report.txt").read_text()
    rows = [ln for ln in text.splitlines() if ln.startswith(" ") and "|" in ln and "Model" not in ln]
    assert len(rows) == 8
    assert (synth_dir / "per_landmark.svg").exists()


def test_external_backend_pipeline(tmp_path):
    out = tmp_path / "ext"
    res = ["--resolutions", "64,80,96,112,128"]
    assert run("synth", "--out", out, *SMALL, "--export-heatmaps", *res) == 0
    assert len(os.listdir(out / "heatmaps")) == 7
    assert run("predict", "--out", out, "--backend", "external", *res) == 0
    assert run("fuse", "--out", out, *res) == 0
    assert run("evaluate", "--out", out, "--split", "all", *res) == 0
    doc = json.loads((out / "results.json").read_text())
    # decode tolerance is 0.75 model px, at most ~4.5 native px here
    assert doc["fused"]["sdr_percent"]["2"] == 100.0


def test_members_subset_and_fuse_two(synth_dir):
    common = ["--out", synth_dir, "--members", "rot800,bright512"]
    assert run("predict", *common, "--noise-sigma", 1.5) == 0
    assert sorted(os.listdir(synth_dir / "predictions")) == ["bright512.csv", "rot800.csv"]
    assert run("fuse", *common) == 0
    a = read_landmark_csv(synth_dir / "predictions" / "bright512.csv", 5)
    b = read_landmark_csv(synth_dir / "predictions" / "rot800.csv", 5)
    fused = read_landmark_csv(synth_dir / "predictions" / "fused.csv", 5)
    for iid, f in fused.items():
        keep = np.where((a[iid].confidence >= b[iid].confidence)[:, None], a[iid].points, b[iid].points)
        # ties drop the first member, bright512
        keep = np.where((a[iid].confidence == b[iid].confidence)[:, None], b[iid].points, keep)
        assert np.array_equal(f.points, keep)


def test_fuse_order_follows_config(tmp_path, synth_dir):
    m = load_manifest(synth_dir / "manifest.json")
    pred_dir = synth_dir / "predictions"
    pred_dir.mkdir()
    for tag, dx in (("p", 1.0), ("q", 2.0)):
        sets = {iid: LandmarkSet(gt.points + dx, confidence=np.full(5, 0.5)) for iid, gt in m.ground_truth().items()}
        write_landmark_csv(sets, pred_dir / f"{tag}.csv")
    for order, survivor in ((["q", "p"], "p"), (["p", "q"], "q")):
        cfg = tmp_path / f"{order[0]}.json"
        cfg.write_text(json.dumps({"ensemble": [{"tag": t, "resolution": 64} for t in order]}))
        assert run("fuse", "--config", cfg, "--out", synth_dir) == 0
        fused = read_landmark_csv(pred_dir / "fused.csv", 5)
        expected = read_landmark_csv(pred_dir / f"{survivor}.csv", 5)
        assert {k: v.replace(confidence=None) for k, v in fused.items()} == {
            k: v.replace(confidence=None) for k, v in expected.items()
        }


def _png(path, w, h, seed):
    arr = (np.random.default_rng(seed).random((h, w)) * 255).astype(np.uint8)
    Image.fromarray(arr).save(path)
    return arr


def test_ingest_two_annotators(tmp_path):
    _png(tmp_path / "a.png", 30, 20, 0)
    arr = np.random.default_rng(1).integers(0, 4000, size=(25, 16)).astype(np.uint16)
    write_mha(header_for(arr, (0.125, 0.125)), arr, tmp_path / "b.mha")
    a1 = {"a": LandmarkSet([[10, 10], [2, 3]]), "b": LandmarkSet([[4, 4], [6, 6]])}
    a2 = {"a": LandmarkSet([[12, 14], [2, 3]]), "b": LandmarkSet([[5, 4], [6, 8]])}
    write_landmark_csv(a1, tmp_path / "ann1.csv")
    write_landmark_csv(a2, tmp_path / "ann2.csv")
    out = tmp_path / "ds"
    rc = run("ingest", "--out", out, "--images", tmp_path / "a.png", tmp_path / "b.mha",
             "--annotations", tmp_path / "ann1.csv", tmp_path / "ann2.csv", "--landmarks", 2, "--spacing", 0.1)
    assert rc == 0
    m = load_manifest(out / "manifest.json")
    assert m.by_id["a"].landmarks.points.tolist() == [[11.0, 12.0], [2.0, 3.0]]
    assert m.by_id["b"].meta.spacing_mm_per_px == 0.125
    _, packed = read_mha(out / "images.mha")
    assert packed.shape == (2, 25, 30)

    out1 = tmp_path / "ds1"
    assert run("ingest", "--out", out1, "--images", tmp_path / "a.png",
               "--annotations", tmp_path / "ann1.csv", "--landmarks", 2) == 2
    assert run("ingest", "--out", out1, "--images", tmp_path / "a.png", "--spacing", 0.096,
               "--annotations", tmp_path / "ann1.csv", "--landmarks", 2) == 0
    assert load_manifest(out1 / "manifest.json").by_id["a"].landmarks == a1["a"]


def test_ingest_missing_annotation_is_data_error(tmp_path):
    _png(tmp_path / "c.png", 8, 8, 0)
    write_landmark_csv({"other": LandmarkSet([[1, 1]])}, tmp_path / "ann.csv")
    assert run("ingest", "--out", tmp_path / "o", "--images", tmp_path / "c.png", "--spacing", 0.1,
               "--annotations", tmp_path / "ann.csv", "--landmarks", 1) == 3


def test_augment_preview(synth_dir):
    assert run("augment-preview", "--out", synth_dir) == 0
    prev = synth_dir / "preview"
    chains = json.loads((prev / "chains.json").read_text())
    assert len(chains) == 2 * 7
    lms = read_landmark_csv(prev / "landmarks.csv", 5)
    m = load_manifest(synth_dir / "manifest.json")
    for key, chain_doc in chains.items():
        iid, tag = key.split("__")
        entry = m.by_id[iid]
        chain = chain_from_dict(chain_doc)
        pts, ok = chain.map_points(entry.landmarks.points, (entry.meta.height, entry.meta.width))
        _, img = read_mha(prev / f"{key}.mha")
        assert img.shape == chain.output_shape((entry.meta.height, entry.meta.width))
        got = lms.get(key)
        if ok.any():
            np.testing.assert_allclose(got.points[ok], pts[ok], atol=5e-7)
        if tag != "bright512":
            assert chain_doc[0] == {"op": "Pad", "margin": 100}


def test_simulate_command(tmp_path, capsys):
    out = tmp_path / "sim"
    assert run("simulate", "--out", out, "--trials", 20, "--k-landmarks", 6) == 0
    text = capsys.readouterr().out
    assert "fused" in text and "reduction" in text
    doc = json.loads((out / "simulate.json").read_text())
    assert doc["trials"] == 20 and len(doc["member_mre_mm"]) == 7
    assert (out / "simulate.svg").exists()


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 5, "jobs": 3, "oracle": {"noise_sigma": 2.0}}))
    c = load_config(cfg, {"seed": 9})
    assert c.seed == 9
    assert c["jobs"] == 3
    assert c["oracle"] == {"noise_sigma": 2.0, "mode": "informative"}
    assert load_config()["drop"] == DEFAULTS["drop"]
    assert load_config().resolutions == [512, 800, 1024, 1280, 1408]


@pytest.mark.parametrize(
    "doc",
    [{"bogus": 1}, {"seed": -1}, {"resolutions": [512, 512, 800, 1024, 1280]}, {"backend": "cnn"},
     {"metrics": {"sdr_thresholds_mm": [3, 2]}}, {"augment": {"spin": 3}}, {"resolutions": [1, 2]}],
)
def test_config_errors(doc):
    with pytest.raises(ConfigError):
        load_config(None, doc)


def test_exit_codes(tmp_path, monkeypatch):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("synth", "--config", bad, "--out", tmp_path) == 2
    assert run("synth", "--config", tmp_path / "missing.json") == 2
    assert run("fuse", "--out", tmp_path / "nowhere") == 3
    assert run("evaluate", "--out", tmp_path / "nowhere") == 3

    def boom(config):
        raise InvariantError("broken")

    monkeypatch.setattr(pipeline, "cmd_fuse", boom)
    assert run("fuse", "--out", tmp_path) == 4


def test_cli_rejects_bad_flags():
    with pytest.raises(SystemExit) as info:
        cli.main(["predict", "--seed", str(2**64)])
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        cli.main(["predict", "--backend", "cnn"])


def test_log_level_from_env(monkeypatch):
    monkeypatch.setenv("CEPHALO_LOG", "DEBUG")
    root = logging.getLogger()
    saved = root.handlers[:], root.level
    root.handlers.clear()
    try:
        cli._setup_logging()
        assert root.level == logging.DEBUG
    finally:
        root.handlers[:], _ = saved[0], root.setLevel(saved[1])
