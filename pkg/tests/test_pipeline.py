import json
import shutil
import struct
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leafcv.cli import main
from leafcv.errors import (CacheFormatError, ClassMismatch, ClassTooSmall, ConfigError, EmptyClassDir,
                           ImageTooSmall, RepresentationMismatch, UndecodableImage)
from leafcv.features import HogParams
from leafcv.metrics import confusion, report
from leafcv.nn import Model, TrainConfig
from leafcv.pipeline import (DatasetManifest, FeatureCache, ModelCheckpoint, RunConfig, emit_chart, evaluate,
                             extract_features, gradcam_batch, ingest, load_checkpoint, read_cache, render_chart,
                             run_training, save_checkpoint, split, write_cache, write_report)
from leafcv.pipeline import cache as cache_mod
from leafcv.pipeline.dataset import largest_remainder
from leafcv.pipeline.runs import lesion_mask, mass_fraction, predict_split
from leafcv.synthdata import SynthConfig, generate

SVG = "{http://www.w3.org/2000/svg}"


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    generate(SynthConfig(per_class=10, image_size=32, seed=5), root)
    return root


@pytest.fixture(scope="module")
def manifest(synth_dir):
    return split(ingest(synth_dir), (0.7, 0.15, 0.15), seed=1)


def hog_config(**kw):
    base = dict(representation="hog", model="linear", descriptor={"cell_size": 8}, image_size=32,
                train={"epochs": 40, "learning_rate": 0.01, "batch_size": 8}, seed=1)
    base.update(kw)
    return RunConfig.from_dict(base)


def cnn_config(**kw):
    base = dict(representation="raw", model="small-cnn", image_size=32,
                train={"epochs": 2, "learning_rate": 3e-3, "batch_size": 8}, seed=1)
    base.update(kw)
    return RunConfig.from_dict(base)


# ---------------------------------------------------------------------------
# ingest and split

def test_ingest_counts_and_ids(tmp_path):
    generate(SynthConfig(per_class=5, seed=2), tmp_path)
    m = ingest(tmp_path)
    assert len(m.samples) == 20
    assert m.classes == ["brown_spot", "healthy", "leaf_blast", "neck_blast"]
    assert sorted({s.class_id for s in m.samples}) == [0, 1, 2, 3]
    healthy = [s for s in m.samples if s.class_id == 1]
    assert all(s.lesion_boxes == [] for s in healthy)
    assert all(s.lesion_boxes for s in m.samples if s.class_id != 1)
    assert ingest(tmp_path).to_json() == m.to_json()


def test_ingest_errors(tmp_path):
    generate(SynthConfig(per_class=2, seed=2), tmp_path)
    (tmp_path / "zz_empty").mkdir()
    with pytest.raises(EmptyClassDir):
        ingest(tmp_path)
    shutil.rmtree(tmp_path / "zz_empty")
    (tmp_path / "healthy" / "broken.ppm").write_bytes(b"P6 9 9 255\n\x00")
    with pytest.raises(UndecodableImage):
        ingest(tmp_path)
    m = ingest(tmp_path, skip_bad=True)
    assert m.skipped == ["healthy/broken.ppm"] and len(m.samples) == 8


def test_split_largest_remainder(manifest):
    for cid in range(4):
        got = [s.split for s in manifest.samples if s.class_id == cid]
        assert (got.count("train"), got.count("val"), got.count("test")) == (7, 2, 1)
    assert largest_remainder(10, (0.7, 0.15, 0.15)) == [7, 2, 1]


@given(st.integers(0, 500), st.lists(st.integers(0, 20), min_size=3, max_size=3).filter(sum))
def test_largest_remainder_sums(n, weights):
    fr = [w / sum(weights) for w in weights]
    counts = largest_remainder(n, fr)
    assert sum(counts) == n
    assert all(abs(c - n * f) < 1 + 1e-9 for c, f in zip(counts, fr))


def test_split_rules(synth_dir):
    base = ingest(synth_dir)
    with pytest.raises(ClassTooSmall):
        split(base, (1.0, 0.0, 0.0))
    with pytest.raises(ConfigError):
        split(base, (0.5, 0.2, 0.2))
    a, b, c = split(base, seed=3), split(base, seed=3), split(base, seed=4)
    assert a.to_json() == b.to_json()
    assert [s.split for s in a.samples] != [s.split for s in c.samples]


def test_manifest_round_trip(manifest, tmp_path):
    manifest.save(tmp_path / "m.json")
    again = DatasetManifest.load(tmp_path / "m.json")
    assert again == manifest and again.to_json() == manifest.to_json()


# ---------------------------------------------------------------------------
# feature cache

def test_cache_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    cache = FeatureCache("lbp", bytes(range(32)), rng.integers(0, 4, 9).astype(np.uint32),
                         rng.integers(0, 3, 9).astype(np.uint8), rng.normal(size=(9, 13)).astype(np.float32))
    write_cache(tmp_path / "c.lfcv", cache)
    back = read_cache(tmp_path / "c.lfcv")
    assert back.kind == "lbp" and back.fingerprint == cache.fingerprint
    assert back.values.tobytes() == cache.values.tobytes()
    np.testing.assert_array_equal(back.class_ids, cache.class_ids)
    np.testing.assert_array_equal(back.splits, cache.splits)
    raw = (tmp_path / "c.lfcv").read_bytes()
    magic, version, kind, dim, count = struct.unpack_from("<4sIBIQ", raw)
    assert (magic, version, kind, dim, count) == (b"LFCV", 1, 2, 13, 9)
    assert raw[21:53] == bytes(range(32))
    assert len(raw) == 53 + 9 * (4 + 1 + 13 * 4)
    write_cache(tmp_path / "d.lfcv", back)
    assert (tmp_path / "d.lfcv").read_bytes() == raw


def test_cache_format_errors(tmp_path):
    (tmp_path / "bad.lfcv").write_bytes(b"NOPE" + bytes(60))
    with pytest.raises(CacheFormatError):
        read_cache(tmp_path / "bad.lfcv")
    cache = FeatureCache("hog", bytes(32), np.zeros(2, np.uint32), np.zeros(2, np.uint8), np.zeros((2, 3), np.float32))
    write_cache(tmp_path / "t.lfcv", cache)
    (tmp_path / "t.lfcv").write_bytes((tmp_path / "t.lfcv").read_bytes()[:-5])
    with pytest.raises(CacheFormatError):
        read_cache(tmp_path / "t.lfcv")


def test_extract_reuses_and_regenerates(manifest, tmp_path, monkeypatch):
    path = tmp_path / "hog.lfcv"
    first = extract_features(manifest, "hog", HogParams(cell_size=8), 32, path)
    assert first.dim == 9 * 3 * 3 * 4 and first.count == 40
    assert list(first.class_ids) == [s.class_id for s in manifest.samples]

    def boom(*a, **k):
        raise AssertionError("cache should have been reused")

    monkeypatch.setattr(cache_mod, "featurize", boom)
    reused = extract_features(manifest, "hog", HogParams(cell_size=8), 32, path)
    assert reused.values.tobytes() == first.values.tobytes()
    monkeypatch.undo()

    changed = extract_features(manifest, "hog", HogParams(cell_size=8, orientations=6), 32, path)
    assert changed.dim == 6 * 36 and changed.fingerprint != first.fingerprint
    assert read_cache(path).fingerprint == changed.fingerprint


def test_extract_parallel_matches_serial(manifest):
    a = extract_features(manifest, "lbp", {"radius": 1, "points": 8}, 32)
    b = extract_features(manifest, "lbp", {"radius": 1, "points": 8}, 32, workers=3)
    assert a.values.tobytes() == b.values.tobytes() and a.dim == 1024


def test_extract_small_image_names_file(manifest):
    with pytest.raises(ImageTooSmall, match=r"\.ppm"):
        extract_features(manifest, "hog", HogParams(cell_size=16), 24)


# ---------------------------------------------------------------------------
# training, checkpoints, evaluation

def test_run_config_invariants():
    with pytest.raises(ConfigError):
        RunConfig(representation="hog", model="small-cnn")
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"model": "linear", "learning_rate": 0.1})
    with pytest.raises(ConfigError):
        RunConfig(representation="hog", model="linear", descriptor={"radius": 3})
    cfg = hog_config()
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_zero_epochs_checkpoint_is_initialization(manifest):
    res = run_training(hog_config(train={"epochs": 0}), manifest)
    init = Model(res.checkpoint.spec)
    for k, v in init.params.items():
        np.testing.assert_array_equal(res.checkpoint.state[k], v)
    assert res.checkpoint.history == []


def test_checkpoint_round_trip(manifest, tmp_path):
    res = run_training(cnn_config(), manifest)
    save_checkpoint(tmp_path / "m.lfck", res.checkpoint)
    back = load_checkpoint(tmp_path / "m.lfck")
    assert back.spec == res.checkpoint.spec and back.class_names == res.checkpoint.class_names
    assert back.history == res.checkpoint.history and back.meta == res.checkpoint.meta
    for k, v in res.checkpoint.state.items():
        assert back.state[k].dtype == v.dtype and back.state[k].tobytes() == v.tobytes()
    x = np.random.default_rng(0).random((4, 3, 32, 32)).astype(np.float32)
    assert back.to_model().forward(x).logits.tobytes() == res.checkpoint.to_model().forward(x).logits.tobytes()
    assert np.array_equal(back.to_model().predict(x)[0], res.checkpoint.to_model().predict(x)[0])
    (tmp_path / "cut.lfck").write_bytes((tmp_path / "m.lfck").read_bytes()[:-7])
    with pytest.raises(CacheFormatError):
        load_checkpoint(tmp_path / "cut.lfck")


def test_evaluate_matches_manual_composition(manifest, tmp_path):
    res = run_training(hog_config(), manifest, cache_dir=tmp_path)
    rep, cm = evaluate(res.checkpoint, manifest, "test")
    assert cm == res.confusions["test"]
    y, pred = predict_split(res.checkpoint, manifest, "test")
    assert rep == report(confusion(y, pred, 4))
    cached_rep, _ = evaluate(res.checkpoint, manifest, "test", cache_dir=tmp_path)
    assert cached_rep == rep
    doc = write_report(tmp_path / "report.json", rep, cm, res.checkpoint, "test")
    parsed = json.loads((tmp_path / "report.json").read_text())
    assert parsed == doc and 0 <= parsed["macro_f1"] <= 1
    assert parsed["metadata"]["averaging"] == "macro" and parsed["metadata"]["seed"] == 1
    assert len(parsed["metadata"]["params_fingerprint"]) == 64


def test_evaluate_train_split_of_fitted_model(manifest):
    res = run_training(hog_config(train={"epochs": 150, "learning_rate": 0.01, "batch_size": 8}), manifest)
    model = res.checkpoint.to_model()
    feats = extract_features(manifest, "hog", HogParams(cell_size=8), 32).select("train")
    assert np.all(model.predict(feats[0])[0] == feats[1])
    rep, _ = evaluate(res.checkpoint, manifest, "train")
    assert rep.accuracy == 1.0


def test_evaluate_class_mismatch(manifest):
    res = run_training(hog_config(train={"epochs": 1}), manifest)
    res.checkpoint.class_names = ["a", "b", "c", "d"]
    with pytest.raises(ClassMismatch):
        evaluate(res.checkpoint, manifest)


def test_pipeline_determinism(tmp_path):
    docs = []
    for run in ("a", "b"):
        root = tmp_path / run
        generate(SynthConfig(per_class=6, image_size=32, seed=11), root / "data")
        m = split(ingest(root / "data"), (0.5, 0.0, 0.5), seed=2)
        texts = []
        for cfg in (cnn_config(), hog_config(train={"epochs": 5})):
            res = run_training(cfg, m)
            rep, cm = evaluate(res.checkpoint, m, "test")
            write_report(root / f"{cfg.model}.json", rep, cm, res.checkpoint, "test")
            texts.append((root / f"{cfg.model}.json").read_bytes())
            texts.append(json.dumps(res.checkpoint.history).encode())
        docs.append(texts)
    assert docs[0] == docs[1]


# ---------------------------------------------------------------------------
# Grad-CAM batch

def test_lesion_mask_and_mass():
    mask = lesion_mask([{"x": 10, "y": 20, "w": 4, "h": 4}], 64, 64, 32, dilation=0.0)
    assert mask.sum() == 4 and mask[10:12, 5:7].all()
    grown = lesion_mask([{"x": 10, "y": 20, "w": 4, "h": 4}], 64, 64, 32)
    assert grown.sum() > mask.sum() and grown[mask].all()
    heat = np.zeros((32, 32))
    heat[10, 5] = 3
    heat[0, 0] = 1
    assert mass_fraction(heat, mask) == 0.75
    assert mass_fraction(np.zeros((32, 32)), mask) == 0.0


def test_gradcam_batch_outputs(manifest, tmp_path):
    res = run_training(cnn_config(), manifest)
    stats = gradcam_batch(res.checkpoint, manifest, "val", tmp_path)
    rows = {r["path"]: r for r in stats["images"]}
    assert len(rows) == 8
    for s in manifest.select("val"):
        stem = s.path.split("/")[1][:-4]
        name = manifest.classes[s.class_id]
        assert (tmp_path / name / f"{stem}.ppm").is_file() and (tmp_path / name / f"{stem}_cam.pgm").is_file()
        frac = rows[s.path]["lesion_mass_fraction"]
        if name == "healthy":
            assert frac is None
        else:
            assert 0.0 <= frac <= 1.0
    assert json.loads((tmp_path / "stats.json").read_text()) == stats
    head = run_training(hog_config(train={"epochs": 1}), manifest)
    with pytest.raises(RepresentationMismatch):
        gradcam_batch(head.checkpoint, manifest, "val", tmp_path / "x")


# ---------------------------------------------------------------------------
# chart

def bars(svg):
    root = ET.fromstring(svg.encode())
    assert root.tag == SVG + "svg" and root.get("version") == "1.1"
    return [r for r in root.iter(SVG + "rect") if r.get("class") == "bar"]


def test_chart_single_bar_height():
    (bar,) = bars(render_chart([("hog", {"accuracy": 0.75})]))
    assert float(bar.get("height")) == pytest.approx(0.75 * 300)


def test_chart_order_and_determinism(tmp_path):
    reps = [("raw", {"accuracy": 0.6, "macro_f1": 0.5}), ("hog", {"accuracy": 0.9, "macro_f1": 0.88}),
            ("lbp", {"accuracy": 0.4, "macro_f1": 0.3})]
    found = bars(render_chart(reps))
    assert [b.get("data-label") for b in found] == ["hog", "lbp", "raw"]
    with_f1 = bars(render_chart(reps, metrics=("accuracy", "macro_f1")))
    assert len(with_f1) == 6
    a = emit_chart(reps, tmp_path / "a.svg")
    assert emit_chart(list(reversed(reps)), tmp_path / "b.svg") == a
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_chart_accepts_metric_reports():
    rep = report(confusion([0, 0, 1, 1], [0, 1, 1, 1], 2))
    (bar,) = bars(render_chart([("x & y", rep)]))
    assert bar.get("data-label") == "x & y"
    assert float(bar.get("height")) == pytest.approx(225.0)


# ---------------------------------------------------------------------------
# CLI

def test_cli_end_to_end(tmp_path, capsys):
    d = str(tmp_path)
    assert main(["synth", "--out", f"{d}/data", "--per-class", "8", "--size", "32", "--seed", "3"]) == 0
    assert main(["ingest", f"{d}/data", "--out", f"{d}/m.json", "--split", "0.5,0.25,0.25", "--seed", "1"]) == 0
    assert main(["extract", "--manifest", f"{d}/m.json", "--kind", "hog", "--size", "32",
                 "--param", "cell_size=8", "--out", f"{d}/hog.lfcv"]) == 0
    assert read_cache(f"{d}/hog.lfcv").dim == 324
    cfg = {"representation": "hog", "model": "linear", "descriptor": {"cell_size": 8}, "image_size": 32,
           "train": {"epochs": 3, "batch_size": 8}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", f"{d}/cfg.json", "--manifest", f"{d}/m.json", "--epochs", "4",
                 "--out", f"{d}/run"]) == 0
    ck = load_checkpoint(f"{d}/run/checkpoint.lfck")
    assert len(ck.history) == 4 and ck.meta["representation"] == "hog"
    assert main(["eval", "--checkpoint", f"{d}/run/checkpoint.lfck", "--manifest", f"{d}/run/manifest.json",
                 "--out", f"{d}/eval.json"]) == 0
    assert json.loads((tmp_path / "eval.json").read_text()) == json.loads((tmp_path / "run/report_test.json").read_text())
    assert main(["chart", "--report", f"hog={d}/eval.json", "--out", f"{d}/c.svg"]) == 0
    assert len(bars((tmp_path / "c.svg").read_text())) == 1
    assert main(["train", "--manifest", f"{d}/m.json", "--model", "small-cnn", "--image-size", "32",
                 "--epochs", "1", "--out", f"{d}/cnn"]) == 0
    assert main(["gradcam", "--checkpoint", f"{d}/cnn/checkpoint.lfck", "--manifest", f"{d}/m.json",
                 "--split", "test", "--out", f"{d}/cam"]) == 0
    assert (tmp_path / "cam" / "stats.json").is_file()


def test_cli_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["extract", "--manifest", "m.json"])
    assert exc.value.code == 1
    assert main(["train", "--representation", "hog", "--model", "small-cnn", "--synth-per-class", "2",
                 "--out", str(tmp_path / "r")]) == 1
    assert main(["ingest", str(tmp_path / "missing"), "--out", str(tmp_path / "m.json")]) == 2
    generate(SynthConfig(per_class=4, image_size=32), tmp_path / "data")
    assert main(["ingest", str(tmp_path / "data"), "--out", str(tmp_path / "m.json"), "--split", "1,0,0"]) == 2
    diverge = {"synth": {"per_class": 3, "image_size": 32}, "representation": "raw", "model": "linear",
               "image_size": 32, "split_fractions": [0.5, 0.0, 0.5],
               "train": {"optimizer": "sgd", "learning_rate": 1e38, "epochs": 3}}
    (tmp_path / "d.json").write_text(json.dumps(diverge))
    with np.errstate(all="ignore"):
        assert main(["train", "--config", str(tmp_path / "d.json"), "--out", str(tmp_path / "dv")]) == 3
    assert "DivergedLoss" in capsys.readouterr().err
