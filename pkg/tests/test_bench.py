import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import pytest

from thbench.bench.cli import main as cli_main
from thbench.bench.config import BenchConfig, load_config, save_config
from thbench.bench.io import (
    load_crop_archive,
    load_frames,
    load_landmarks,
    save_landmarks_csv,
    save_landmarks_json,
)
from thbench.bench.manifest import DatasetManifest, ManifestEntry, load_manifest
from thbench.bench.pipeline import run_eval, run_preprocess, run_train
from thbench.errors import ConfigurationError
from thbench.geom import CropConfig, SmoothingConfig
from thbench.synthetic import rotating_face_landmarks

from fixture_dataset import build_dataset, reload


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("dataset")
    manifest_path = build_dataset(root, n_reals=2, n_frames=8)
    return root, manifest_path


@pytest.fixture(scope="module")
def preprocessed(dataset, tmp_path_factory):
    root, manifest_path = dataset
    out = tmp_path_factory.mktemp("out")
    config = BenchConfig(output_dir=out, emit_trends=True)
    manifest = reload(manifest_path)
    statuses = run_preprocess(manifest, config)
    return manifest, config, statuses


# ------------------------------------------------------------------ config


def test_config_defaults_match_protocol_constants():
    cfg = BenchConfig()
    assert cfg.smoothing.window_size == 11
    assert cfg.crop.r1 == 10.0 / 9.0
    assert cfg.crop.r2 == 8.0 / 9.0
    assert cfg.crop.side_factor == 41.0 / 18.0
    assert cfg.lexicon_size == 300
    assert cfg.smoothing.boundary_policy == "reflect"


def test_config_yaml_roundtrip(tmp_path):
    cfg = BenchConfig(seed=7, workers=3,
                      smoothing=SmoothingConfig(window_size=5, boundary_policy="clamp"),
                      crop=CropConfig(r1=1.0, r2=0.5, side_factor=2.0))
    cfg.metrics["lrsd"] = True
    cfg.checkpoints["lipreading"] = "somewhere.pt"
    path = tmp_path / "cfg.yaml"
    save_config(path, cfg)
    back = load_config(path)
    assert back.seed == 7
    assert back.workers == 3
    assert back.smoothing == cfg.smoothing
    assert back.crop == cfg.crop
    assert back.metrics["lrsd"] is True
    assert back.checkpoints["lipreading"] == "somewhere.pt"


def test_config_eval_validation_checkpoints(tmp_path):
    cfg = BenchConfig(output_dir=tmp_path)
    cfg.metrics["esd"] = True
    with pytest.raises(ConfigurationError):
        cfg.validate_for_eval()
    cfg.checkpoints["emotion"] = str(tmp_path / "missing.pt")
    with pytest.raises(ConfigurationError):
        cfg.validate_for_eval()


def test_model_cache_env_resolution(tmp_path, monkeypatch):
    from thbench.bench.config import resolve_model_path

    monkeypatch.setenv("THBENCH_MODEL_CACHE", str(tmp_path))
    assert resolve_model_path("model.pt") == tmp_path / "model.pt"


# ---------------------------------------------------------------- manifest


def test_manifest_roundtrip(dataset):
    _, manifest_path = dataset
    manifest = reload(manifest_path)
    assert len(manifest.reals()) == 2
    assert manifest.methods() == ["copycat", "smudge"]
    pairs = manifest.pairs()
    assert len(pairs) == 4
    assert pairs[0][0] == "copycat"


def test_manifest_rejects_double_pairing(tmp_path):
    entries = [
        ManifestEntry(id="r", role="real", source=Path("x")),
        ManifestEntry(id="f1", role="generated", method="m", real_id="r", source=Path("x")),
        ManifestEntry(id="f2", role="generated", method="m", real_id="r", source=Path("x")),
    ]
    with pytest.raises(ValueError):
        DatasetManifest(entries=entries)


def test_manifest_rejects_unknown_real(tmp_path):
    entries = [
        ManifestEntry(id="f", role="generated", method="m", real_id="ghost", source=Path("x")),
    ]
    with pytest.raises(ValueError):
        DatasetManifest(entries=entries)


def test_manifest_missing_paths_detected(tmp_path, dataset):
    _, manifest_path = dataset
    raw = json.loads(manifest_path.read_text())
    raw["entries"][0]["source"] = "frames/nonexistent"
    bad_path = tmp_path / "bad_manifest.json"
    bad_path.write_text(json.dumps(raw))
    with pytest.raises(FileNotFoundError):
        load_manifest(bad_path)


# ---------------------------------------------------------------------- io


def test_landmark_csv_json_roundtrip(tmp_path):
    lms = rotating_face_landmarks(5, yaw_sweep=(-10, 10))
    csv_path = tmp_path / "lms.csv"
    save_landmarks_csv(csv_path, lms)
    back = load_landmarks(csv_path, frame_rate=lms.frame_rate)
    assert back.dims == 3
    assert np.allclose(back.points, lms.points, atol=0)

    json_path = tmp_path / "lms.json"
    save_landmarks_json(json_path, lms)
    back_json = load_landmarks(json_path)
    assert back_json.frame_rate == lms.frame_rate
    assert np.allclose(back_json.points, lms.points, atol=1e-12)


def test_load_frames_from_directory(dataset):
    root, manifest_path = dataset
    frames = load_frames(root / "frames" / "real000")
    assert frames.ndim == 4 and frames.shape[3] == 3
    assert frames.dtype == np.uint8


# ------------------------------------------------------------- preprocess


def test_preprocess_all_ok(preprocessed):
    _, _, statuses = preprocessed
    assert len(statuses) == 6
    assert all(s["status"] == "ok" for s in statuses)


def test_preprocess_outputs_exist(preprocessed):
    manifest, config, _ = preprocessed
    out = Path(config.output_dir)
    for entry in manifest.entries:
        assert (out / "crops" / f"{entry.id}.npz").exists()
        assert (out / "poses" / f"{entry.id}.npz").exists()
    archive = load_crop_archive(out / "crops" / "real000.npz")
    assert archive["frames"].ndim == 4
    side = archive["rects"][0, 2]
    assert archive["frames"].shape[1:3] == (side, side)


def test_preprocess_rerun_skips(preprocessed):
    manifest, config, _ = preprocessed
    statuses = run_preprocess(manifest, config)
    assert all(s["status"] == "skipped" for s in statuses)


def test_preprocess_empty_manifest(tmp_path):
    manifest = DatasetManifest(entries=[], root=tmp_path)
    config = BenchConfig(output_dir=tmp_path / "out")
    assert run_preprocess(manifest, config) == []


def test_preprocess_pose_traces_recover_sweep(preprocessed):
    manifest, config, _ = preprocessed
    from thbench.bench.io import load_pose_archive

    pose = load_pose_archive(Path(config.output_dir) / "poses" / "real000.npz")
    yaw = pose["angles"][:, 1]
    assert yaw[0] == pytest.approx(-20.0, abs=1e-5)
    assert yaw[-1] == pytest.approx(20.0, abs=1e-5)


def test_preprocess_fault_isolation(tmp_path):
    manifest_path = build_dataset(tmp_path, n_reals=2, n_frames=6, methods=("copycat",))
    manifest = reload(manifest_path)
    # corrupt one landmark file
    victim = manifest.resolve(manifest.get("real001").landmarks)
    victim.write_text("{not json")
    config = BenchConfig(output_dir=tmp_path / "out")
    statuses = run_preprocess(manifest, config)
    by_id = {s["id"]: s for s in statuses}
    assert by_id["real001"]["status"] == "failed"
    assert "error" in by_id["real001"]
    ok = [s for s in statuses if s["status"] == "ok"]
    assert len(ok) == len(statuses) - 1


# ------------------------------------------------------------------- eval


@pytest.fixture(scope="module")
def eval_report(preprocessed):
    manifest, config, _ = preprocessed
    report = run_eval(manifest, config)
    return manifest, config, report


def test_eval_copycat_has_perfect_scores(eval_report):
    _, _, report = eval_report
    stats = report.per_method["copycat"]
    assert stats["arcsim"]["mean"] == pytest.approx(1.0, abs=1e-12)
    assert stats["ssim"]["mean"] == pytest.approx(1.0, abs=1e-12)
    assert stats["fid"]["mean"] == pytest.approx(0.0, abs=1e-8)
    # identical frames: per-record psnr is the infinity sentinel
    assert all(math.isinf(rec["psnr"]) for rec in report.records
               if rec["method"] == "copycat")


def test_eval_smudge_strictly_worse(eval_report):
    _, _, report = eval_report
    copycat = report.per_method["copycat"]
    smudge = report.per_method["smudge"]
    assert smudge["ssim"]["mean"] < copycat["ssim"]["mean"]
    assert smudge["arcsim"]["mean"] < copycat["arcsim"]["mean"]
    assert smudge["fid"]["mean"] > copycat["fid"]["mean"]
    assert smudge["cpbd"]["mean"] < copycat["cpbd"]["mean"]


def test_eval_records_carry_pose_and_motion(eval_report):
    _, _, report = eval_report
    rec = next(r for r in report.records if r["video_id"] == "real000")
    assert rec["motion_score"] == pytest.approx(40.0, abs=1e-4)
    assert "pose_ref" in rec and "pose_tgt" in rec


def test_eval_writes_report_tree(eval_report):
    _, config, _ = eval_report
    reports = Path(config.output_dir) / "reports"
    assert (reports / "report.json").exists()
    assert (reports / "run_meta.json").exists()
    assert (reports / "records.csv").exists()
    assert (reports / "summary.csv").exists()
    assert list((reports / "by_motion").glob("*.tsv"))
    assert list((reports / "trends").glob("*.tsv"))


def test_eval_deterministic_bodies(preprocessed, tmp_path):
    manifest, config, _ = preprocessed
    report1 = run_eval(manifest, config)
    body1 = (Path(config.output_dir) / "reports" / "report.json").read_bytes()
    report2 = run_eval(manifest, config)
    body2 = (Path(config.output_dir) / "reports" / "report.json").read_bytes()
    assert body1 == body2
    assert report1.body() == report2.body()


def test_eval_parallel_matches_sequential(tmp_path):
    manifest_path = build_dataset(tmp_path, n_reals=2, n_frames=6, methods=("copycat", "smudge"))
    manifest = reload(manifest_path)
    seq_cfg = BenchConfig(output_dir=tmp_path / "seq", workers=1, emit_trends=False)
    par_cfg = BenchConfig(output_dir=tmp_path / "par", workers=4, emit_trends=False)
    run_preprocess(manifest, seq_cfg)
    run_preprocess(manifest, par_cfg)
    seq_report = run_eval(manifest, seq_cfg)
    par_report = run_eval(manifest, par_cfg)
    seq_body = dict(seq_report.body())
    par_body = dict(par_report.body())
    # config digests legitimately differ (worker count is config); the
    # measurement content must not
    seq_body["provenance"] = par_body["provenance"] = None
    assert seq_body == par_body


def test_eval_disabled_metrics_absent(preprocessed):
    manifest, config, _ = preprocessed
    import copy

    cfg = copy.deepcopy(config)
    cfg.metrics.update({"ssim": False, "cpbd": False, "fid": False})
    cfg.emit_trends = False
    report = run_eval(manifest, cfg)
    rec = report.records[0]
    assert "ssim" not in rec
    assert "cpbd" not in rec
    assert "fid" not in rec
    assert "arcsim" in rec


def test_eval_missing_checkpoint_fails_before_work(preprocessed):
    manifest, config, _ = preprocessed
    import copy

    cfg = copy.deepcopy(config)
    cfg.metrics["lrsd"] = True
    with pytest.raises(ConfigurationError):
        run_eval(manifest, cfg)


def test_eval_fault_injection_single_failure(tmp_path):
    manifest_path = build_dataset(tmp_path, n_reals=2, n_frames=6, methods=("copycat",))
    manifest = reload(manifest_path)
    config = BenchConfig(output_dir=tmp_path / "out", emit_trends=False)
    run_preprocess(manifest, config)
    # corrupt one crop archive: that pair fails, the other succeeds
    victim = tmp_path / "out" / "crops" / "copycat_real001.npz"
    victim.write_bytes(b"garbage")
    report = run_eval(manifest, config)
    assert len(report.failures) == 1
    assert report.failures[0]["fake_id"] == "copycat_real001"
    assert len(report.records) == 1
    assert report.records[0]["fake_id"] == "copycat_real000"


# ------------------------------------------------------------------ train


def test_run_train_and_semantic_eval(tmp_path):
    # tiny end-to-end: train lipreading + emotion + blink on the fixture,
    # then run eval with all semantic metrics enabled
    manifest_path = build_dataset(tmp_path, n_reals=4, n_frames=14,
                                  methods=("copycat",),
                                  splits=["train", "train", "train", "test"])
    manifest = reload(manifest_path)
    config = BenchConfig(output_dir=tmp_path / "out", emit_trends=False)
    config.train.epochs = 2
    config.train.frames = 6
    config.train.height = 24
    config.train.width = 24
    config.train.st_channels = (4,)
    config.train.refine_base_width = 4
    config.train.feature_dim = 16
    config.train.mlp_hidden = (16,)
    config.blink = dataclasses.replace(config.blink, slice_length=4, eye_crop_size=16)
    run_preprocess(manifest, config)

    for target in ("lipreading", "emotion", "blink"):
        ckpt, run = run_train(manifest, config, target)
        assert ckpt.exists()
        assert run.final_train_accuracy is not None

    config.metrics.update({"lrsd": True, "esd": True, "bsd": True})
    config.checkpoints = {t: str(tmp_path / "out" / "checkpoints" / f"{t}.pt")
                          for t in ("lipreading", "emotion", "blink")}
    report = run_eval(manifest, config)
    assert not report.failures
    rec = report.records[0]
    assert rec["lrsd"] >= 0.0
    assert -1.0 <= rec["esd"] <= 1.0
    assert -1.0 <= rec["bsd"] <= 1.0
    assert rec["lip_l2"] == pytest.approx(np.sqrt(rec["lrsd"]), abs=1e-9)


def test_run_train_missing_labels(tmp_path):
    manifest_path = build_dataset(tmp_path, n_reals=1, n_frames=6, methods=("copycat",),
                                  splits=["test"])
    manifest = reload(manifest_path)
    config = BenchConfig(output_dir=tmp_path / "out")
    with pytest.raises(ValueError):
        run_train(manifest, config, "lipreading")


# -------------------------------------------------------------------- cli


def test_cli_preprocess_eval_report(tmp_path, capsys):
    manifest_path = build_dataset(tmp_path, n_reals=1, n_frames=6, methods=("copycat",))
    out = tmp_path / "out"
    code = cli_main(["preprocess", "--manifest", str(manifest_path),
                     "--output-dir", str(out)])
    assert code == 0
    counts = json.loads(capsys.readouterr().out.strip())
    assert counts == {"ok": 2}

    code = cli_main(["eval", "--manifest", str(manifest_path),
                     "--output-dir", str(out)])
    assert code == 0
    payload = json.loads(capsys.readouterr().out.strip())
    assert payload["failures"] == 0
    assert payload["methods"]["copycat"]["arcsim"] == pytest.approx(1.0)

    redone = tmp_path / "reports2"
    code = cli_main(["report", "--records", str(out / "reports" / "report.json"),
                     "--output", str(redone)])
    assert code == 0
    original = json.loads((out / "reports" / "report.json").read_text())
    rebuilt = json.loads((redone / "report.json").read_text())
    assert rebuilt["aggregates"] == original["aggregates"]


def test_cli_features_export(tmp_path, capsys):
    manifest_path = build_dataset(tmp_path, n_reals=2, n_frames=8, methods=("copycat",),
                                  splits=["train", "train"])
    out = tmp_path / "out"
    config_path = tmp_path / "cfg.yaml"
    cfg = BenchConfig(output_dir=out)
    cfg.train.epochs = 1
    cfg.train.frames = 4
    cfg.train.height = 16
    cfg.train.width = 16
    cfg.train.st_channels = (4,)
    cfg.train.refine_base_width = 4
    cfg.train.feature_dim = 8
    cfg.train.mlp_hidden = (8,)
    save_config(config_path, cfg)

    assert cli_main(["preprocess", "--manifest", str(manifest_path),
                     "--config", str(config_path)]) == 0
    capsys.readouterr()
    assert cli_main(["train", "--manifest", str(manifest_path),
                     "--config", str(config_path), "--target", "emotion"]) == 0
    train_out = json.loads(capsys.readouterr().out.strip())
    ckpt = train_out["checkpoint"]

    assert cli_main(["features", "--manifest", str(manifest_path),
                     "--config", str(config_path), "--checkpoint", ckpt,
                     "--split", "train"]) == 0
    feats_path = Path(capsys.readouterr().out.strip())
    assert feats_path.exists()
    from thbench.stnet import load_features

    export = load_features(feats_path)
    assert export.features.shape[0] == 2
    assert export.fingerprint
