"""Pipeline stages: preprocess, evaluate, train.

Preprocessing is idempotent per entry (content-hash skip) and entry
failures never abort a run; they become failure records in the output.
Evaluation is deterministic for a fixed manifest + config + seed: record
ordering is canonical, aggregation is order-independent, and timestamps
stay out of the report body.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import cv2
import numpy as np
import torch

from .. import geom, imgq, semmet
from ..blinkdata import eye_region_crops, label_frames, resolve_threshold, sample_slices
from ..embed import FeatureVector, load_provider, video_arcsim
from ..errors import ConfigurationError
from ..report import MetricReport, aggregate, trend_trace, write_binned_tsv, write_report, write_trend_tsv
from ..stnet import (
    LabeledClips,
    STNetConfig,
    TrainRun,
    build_lexicon,
    extract_features,
    forward_clips,
    load_checkpoint,
    save_features,
    train_classifier,
)
from . import io
from .config import BenchConfig, METRIC_CHECKPOINTS, SEMANTIC_METRICS
from .manifest import DatasetManifest, ManifestEntry

PREPROCESS_VERSION = 1


# ------------------------------------------------------------- preprocess


def _entry_digest(manifest: DatasetManifest, entry: ManifestEntry, config: BenchConfig) -> str:
    source = manifest.resolve(entry.source)
    if source.is_dir():
        listing = sorted((p.name, p.stat().st_size) for p in source.iterdir() if p.is_file())
        source_part = listing
    else:
        source_part = [(source.name, source.stat().st_size)]
    parts = [
        {"version": PREPROCESS_VERSION,
         "smoothing": asdict(config.smoothing),
         "crop": asdict(config.crop)},
        source_part,
    ]
    digest_parts = parts + ([manifest.resolve(entry.landmarks)] if entry.landmarks else [])
    return io.content_hash(*digest_parts)


def _preprocess_entry(manifest: DatasetManifest, entry: ManifestEntry,
                      config: BenchConfig, crops_dir: Path, poses_dir: Path) -> dict:
    crop_path = crops_dir / f"{entry.id}.npz"
    digest = _entry_digest(manifest, entry, config)
    if io.stored_digest(crop_path) == digest:
        return {"id": entry.id, "status": "skipped"}

    if entry.landmarks is None:
        raise ValueError("entry has no landmark file")
    frames = io.load_frames(manifest.resolve(entry.source))
    lms = io.load_landmarks(manifest.resolve(entry.landmarks), frame_rate=entry.frame_rate)
    if frames.shape[0] != len(lms):
        raise ValueError(f"{frames.shape[0]} frames but {len(lms)} landmark records")

    result = geom.track_and_crop(frames, lms, config.crop, config.smoothing)
    io.save_crop_archive(crop_path, result.clip.frames, result.rects,
                         entry.frame_rate, result.face_length, digest)

    if lms.dims == 3:
        trace = geom.estimate_pose_trace(lms)
        io.save_pose_archive(poses_dir / f"{entry.id}.npz", trace.angles,
                             trace.registration_residual, digest)
    return {"id": entry.id, "status": "ok"}


def run_preprocess(manifest: DatasetManifest, config: BenchConfig) -> list[dict]:
    """Crop every manifest entry and estimate pose traces where landmarks
    are 3D. Returns one status record per entry; failures are recorded, not
    raised."""
    out = Path(config.output_dir)
    crops_dir = out / "crops"
    poses_dir = out / "poses"
    crops_dir.mkdir(parents=True, exist_ok=True)
    poses_dir.mkdir(parents=True, exist_ok=True)

    entries = sorted(manifest.entries, key=lambda e: e.id)

    def work(entry: ManifestEntry) -> dict:
        try:
            return _preprocess_entry(manifest, entry, config, crops_dir, poses_dir)
        except Exception as exc:
            return {"id": entry.id, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            statuses = list(pool.map(work, entries))
    else:
        statuses = [work(e) for e in entries]
    statuses.sort(key=lambda s: s["id"])
    (out / "preprocess_log.json").write_text(json.dumps(statuses, indent=1, sort_keys=True))
    return statuses


# ------------------------------------------------------------------- eval


def clip_to_net_input(frames: np.ndarray, net_cfg: STNetConfig) -> np.ndarray:
    """Adapt an arbitrary (T, H, W[, C]) uint8/float clip to a network's
    declared geometry: luma for single-channel nets, spatial resize, and
    uniform temporal sampling (short clips repeat the last frame)."""
    arr = np.asarray(frames)
    if np.issubdtype(arr.dtype, np.integer):
        arr = arr.astype(np.float32) / 255.0
    else:
        arr = arr.astype(np.float32)
    if arr.ndim == 3:
        arr = arr[..., None]
    if net_cfg.channels == 1 and arr.shape[3] == 3:
        arr = arr @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
        arr = arr[..., None]
    elif net_cfg.channels == 3 and arr.shape[3] == 1:
        arr = np.repeat(arr, 3, axis=3)

    t = arr.shape[0]
    if t >= net_cfg.frames:
        idx = np.linspace(0, t - 1, net_cfg.frames).round().astype(int)
    else:
        idx = np.concatenate([np.arange(t), np.full(net_cfg.frames - t, t - 1)])
    arr = arr[idx]

    if arr.shape[1] != net_cfg.height or arr.shape[2] != net_cfg.width:
        resized = np.empty((net_cfg.frames, net_cfg.height, net_cfg.width, arr.shape[3]),
                           dtype=np.float32)
        for i in range(net_cfg.frames):
            frame = cv2.resize(arr[i], (net_cfg.width, net_cfg.height),
                               interpolation=cv2.INTER_AREA)
            resized[i] = frame if frame.ndim == 3 else frame[..., None]
        arr = resized
    return arr


class _SemanticNet:
    def __init__(self, path: Path):
        self.net, payload = load_checkpoint(path)
        self.config = self.net.config
        self.fingerprint = payload["fingerprint"]
        self.labels = payload["labels"]

    def clip_feature(self, frames: np.ndarray) -> FeatureVector:
        clip = clip_to_net_input(frames, self.config)[None]
        feats, _ = forward_clips(self.net, clip)
        return FeatureVector(values=feats[0].astype(np.float64), source=self.fingerprint)

    def slice_features(self, slices) -> list[FeatureVector]:
        # adapt each (t, S, S) slice to the checkpoint's declared geometry
        clips = np.stack([clip_to_net_input(s, self.config) for s in slices])
        feats, _ = forward_clips(self.net, clips)
        return [FeatureVector(values=f.astype(np.float64), source=self.fingerprint)
                for f in feats]


def _mean_or_none(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def _load_pose(out_dir: Path, entry_id: str):
    path = out_dir / "poses" / f"{entry_id}.npz"
    if not path.exists():
        return None
    return io.load_pose_archive(path)


def _blink_slices_for(manifest: DatasetManifest, entry: ManifestEntry, config: BenchConfig):
    """Non-overlapping eye-region slices of one clip for blink scoring."""
    frames = io.load_frames(manifest.resolve(entry.source))
    lms = io.load_landmarks(manifest.resolve(entry.landmarks), frame_rate=entry.frame_rate)
    crops = eye_region_crops(frames, lms, config.blink)
    length = config.blink.slice_length
    count = crops.shape[0] // length
    return [crops[i * length:(i + 1) * length] for i in range(count)]


def _evaluate_pair(manifest: DatasetManifest, method: str, real: ManifestEntry,
                   fake: ManifestEntry, config: BenchConfig, providers: dict,
                   nets: dict, out: Path) -> tuple[dict, dict]:
    crops_real = io.load_crop_archive(out / "crops" / f"{real.id}.npz")
    crops_fake = io.load_crop_archive(out / "crops" / f"{fake.id}.npz")
    frames_real = crops_real["frames"]
    frames_fake = crops_fake["frames"]
    t = min(frames_real.shape[0], frames_fake.shape[0])
    frames_real = frames_real[:t]
    frames_fake = frames_fake[:t]
    if frames_fake.shape[1:3] != frames_real.shape[1:3]:
        h, w = frames_real.shape[1:3]
        frames_fake = np.stack([cv2.resize(f, (w, h), interpolation=cv2.INTER_AREA)
                                for f in frames_fake])

    record: dict = {"video_id": real.id, "fake_id": fake.id, "method": method,
                    "label": real.labels.get("word") or real.labels.get("emotion")}
    extras: dict = {"inception_real": [], "inception_fake": []}

    metrics = config.metrics
    per_frame_arcsim = None
    if metrics.get("arcsim"):
        scores, mean = video_arcsim(frames_real, frames_fake, providers["identity"])
        record["arcsim"] = mean
        per_frame_arcsim = scores

    per_frame_ssim = []
    per_frame_psnr = []
    for i in range(t):
        gray_r = imgq.to_grayscale(frames_real[i])
        gray_f = imgq.to_grayscale(frames_fake[i])
        if metrics.get("ssim"):
            per_frame_ssim.append(imgq.ssim(gray_r, gray_f))
        if metrics.get("psnr"):
            per_frame_psnr.append(imgq.psnr(gray_r, gray_f))
    if metrics.get("ssim"):
        record["ssim"] = _mean_or_none(per_frame_ssim)
    if metrics.get("psnr"):
        record["psnr"] = _mean_or_none(per_frame_psnr)

    if metrics.get("cpbd"):
        scores = []
        flags = []
        for i in range(t):
            try:
                res = imgq.cpbd(imgq.to_grayscale(frames_fake[i]))
            except ValueError:
                scores, flags = [], []
                break  # crop smaller than one block: sharpness not measurable
            scores.append(res.score)
            flags.append(res.no_edges)
        record["cpbd"] = _mean_or_none(scores)
        record["cpbd_no_edges"] = bool(flags) and all(flags)

    if metrics.get("fid") or config.emit_trends:
        inception = providers["inception"]
        extras["inception_real"] = [inception.embed(f).values for f in frames_real]
        extras["inception_fake"] = [inception.embed(f).values for f in frames_fake]

    pose = _load_pose(out, real.id)
    if pose is not None:
        yaw = pose["angles"][:, 1]
        record["pose_yaw"] = float(np.mean(yaw))
        record["pose_pitch"] = float(np.mean(pose["angles"][:, 0]))
        record["pose_roll"] = float(np.mean(pose["angles"][:, 2]))
        trace = geom.PoseTrace(angles=pose["angles"], registration_residual=pose["residuals"])
        record["motion_score"] = geom.head_motion_score(trace)
        ref_idx = min(max(fake.reference_frame, 0), yaw.shape[0] - 1)
        record["pose_ref"] = float(yaw[ref_idx])
        record["pose_tgt"] = float(np.mean(yaw))
        extras["yaw_trace"] = yaw[:t]

    if metrics.get("lrsd"):
        net = nets["lipreading"]
        feat_real = net.clip_feature(frames_real)
        feat_fake = net.clip_feature(frames_fake)
        record["lrsd"] = semmet.lrsd(feat_real, feat_fake)
        record["lip_l2"] = semmet.feature_l2(feat_real, feat_fake)

    if metrics.get("esd"):
        net = nets["emotion"]
        feat_real = net.clip_feature(frames_real)
        feat_fake = net.clip_feature(frames_fake)
        record["esd"] = semmet.esd(feat_real, feat_fake)

    if metrics.get("bsd"):
        net = nets["blink"]
        slices_real = _blink_slices_for(manifest, real, config)
        slices_fake = _blink_slices_for(manifest, fake, config)
        n = min(len(slices_real), len(slices_fake))
        if n == 0:
            record["bsd"] = None
        else:
            feats_real = net.slice_features(slices_real[:n])
            feats_fake = net.slice_features(slices_fake[:n])
            record["bsd"] = semmet.bsd_video(feats_real, feats_fake)

    # per-frame trend trace: yaw vs identity/quality metrics plus the
    # windowed distribution-distance proxy (a set-level stand-in, labeled so)
    if config.emit_trends and "yaw_trace" in extras and t >= 2:
        series = {}
        if per_frame_arcsim is not None:
            series["arcsim"] = per_frame_arcsim[:t]
        if per_frame_ssim:
            series["ssim"] = np.asarray(per_frame_ssim)[:t]
        if extras["inception_real"]:
            series["fid_window_proxy"] = imgq.windowed_frechet_trace(
                np.asarray(extras["inception_real"])[:t],
                np.asarray(extras["inception_fake"])[:t],
                window=config.fid_trend_window)
        trace_tbl = trend_trace(series, extras["yaw_trace"])
        trend_path = out / "reports" / "trends" / f"{method}__{fake.id}.tsv"
        write_trend_tsv(trend_path, trace_tbl)

    return record, extras


def run_eval(manifest: DatasetManifest, config: BenchConfig, split: str = "test") -> MetricReport:
    """Execute the evaluation protocol over every paired clip and write the
    report tree. Deterministic for a fixed (manifest, config, seed)."""
    config.validate_for_eval()
    torch.manual_seed(config.seed)

    providers = {"identity": load_provider(config.identity_provider),
                 "inception": load_provider(config.inception_provider)}
    nets = {}
    for metric in SEMANTIC_METRICS:
        if config.metrics.get(metric):
            target = METRIC_CHECKPOINTS[metric]
            nets[target] = _SemanticNet(config.checkpoint_path(target))

    out = Path(config.output_dir)
    pairs = manifest.pairs(split=split)
    records: list[dict] = []
    failures: list[dict] = []
    fid_feats: dict[str, dict] = {}

    def work(triple):
        method, real, fake = triple
        try:
            return triple, _evaluate_pair(manifest, method, real, fake, config,
                                          providers, nets, out), None
        except Exception as exc:
            return triple, None, f"{type(exc).__name__}: {exc}"

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(work, pairs))
    else:
        results = [work(p) for p in pairs]

    for (method, real, fake), payload, error in results:
        if error is not None:
            failures.append({"method": method, "video_id": real.id,
                             "fake_id": fake.id, "error": error})
            continue
        record, extras = payload
        records.append(record)
        bucket = fid_feats.setdefault(method, {"real": [], "fake": []})
        bucket["real"].extend(extras["inception_real"])
        bucket["fake"].extend(extras["inception_fake"])

    if config.metrics.get("fid"):
        for method, bucket in sorted(fid_feats.items()):
            if len(bucket["real"]) >= 2 and len(bucket["fake"]) >= 2:
                value = imgq.frechet_from_features(np.asarray(bucket["real"]),
                                                   np.asarray(bucket["fake"]))
            else:
                value = None
            for rec in records:
                if rec["method"] == method:
                    rec["fid"] = value

    failures.sort(key=lambda f: (f["method"], f["fake_id"]))
    provenance = {
        "config_digest": io.content_hash(config.to_dict()),
        "split": split,
        "seed": config.seed,
        "providers": {name: prov.fingerprint for name, prov in sorted(providers.items())},
        "checkpoints": {target: net.fingerprint for target, net in sorted(nets.items())},
        "motion_bins": {"axis": config.motion_bins.axis, "edges": list(config.motion_bins.edges)},
        "pose_bins": {"axis": config.pose_bins.axis, "edges": list(config.pose_bins.edges)},
    }
    report = aggregate(records, motion_spec=config.motion_bins, pose_spec=config.pose_bins,
                       provenance=provenance, failures=failures)
    report.self_check()

    reports_dir = out / "reports"
    write_report(report, reports_dir, run_meta={
        "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "entries_evaluated": len(records),
        "entries_failed": len(failures),
    })
    for method, metrics_map in sorted(report.by_motion.items()):
        for metric, binned in sorted(metrics_map.items()):
            write_binned_tsv(reports_dir / "by_motion" / f"{method}__{metric}.tsv", binned)
    for method, metrics_map in sorted(report.by_pose.items()):
        for metric, binned in sorted(metrics_map.items()):
            write_binned_tsv(reports_dir / "by_pose" / f"{method}__{metric}.tsv", binned)
    return report


# ------------------------------------------------------------------ train


def _temporal_kernels(n_layers: int) -> tuple[int, ...]:
    """Temporal kernel per 3D layer: 5 first, 3 afterwards."""
    return tuple([5] + [3] * (n_layers - 1))


def _labeled_clips_for(manifest: DatasetManifest, config: BenchConfig, label_key: str,
                       split: str, label_space: list[str], net_cfg: STNetConfig) -> LabeledClips:
    out = Path(config.output_dir)
    index = {label: i for i, label in enumerate(label_space)}
    clips, labels, ids = [], [], []
    for entry in sorted(manifest.reals(split), key=lambda e: e.id):
        label = entry.labels.get(label_key)
        if label is None or str(label).upper() not in index:
            continue
        crop_path = out / "crops" / f"{entry.id}.npz"
        frames = io.load_crop_archive(crop_path)["frames"]
        clips.append(clip_to_net_input(frames, net_cfg))
        labels.append(index[str(label).upper()])
        ids.append(entry.id)
    if not clips:
        raise ValueError(f"no {split!r} entries carry a {label_key!r} label")
    return LabeledClips(clips=np.stack(clips), labels=np.array(labels), ids=ids)


def _blink_training_data(manifest: DatasetManifest, config: BenchConfig,
                         split: str, net_cfg: STNetConfig) -> LabeledClips:
    from ..blinkdata import balance_slices, write_slice_manifest
    from ..geom import eye_open_rates

    entries = sorted(manifest.reals(split), key=lambda e: e.id)
    if not entries:
        raise ValueError(f"no {split!r} entries for blink dataset construction")
    rates_per_entry = {}
    for entry in entries:
        lms = io.load_landmarks(manifest.resolve(entry.landmarks), frame_rate=entry.frame_rate)
        rates_per_entry[entry.id] = (entry, eye_open_rates(lms), lms)
    pooled = np.concatenate([r for _, r, _ in rates_per_entry.values()])
    threshold = resolve_threshold(pooled, config.blink)

    all_slices = []
    for entry_id in sorted(rates_per_entry):
        entry, rates, lms = rates_per_entry[entry_id]
        frame_labels = label_frames(rates, config.blink, threshold=threshold)
        frames = io.load_frames(manifest.resolve(entry.source))
        crops = eye_region_crops(frames, lms, config.blink)
        all_slices.extend(sample_slices(frame_labels, config.blink,
                                        video_id=entry_id, frames=crops))
    balanced = balance_slices(all_slices, seed=config.seed)
    if not balanced:
        raise ValueError("no blink slices could be sampled")
    out = Path(config.output_dir)
    write_slice_manifest(out / "blink_slices.jsonl", balanced)

    clips = np.stack([s.crops[..., None] for s in balanced])
    labels = np.array([s.label for s in balanced])
    ids = [f"{s.video_id}:{s.start}" for s in balanced]
    return LabeledClips(clips=clips, labels=labels, ids=ids)


def run_train(manifest: DatasetManifest, config: BenchConfig, target: str,
              head: str = "softmax", warm_start: Path | None = None) -> tuple[Path, TrainRun]:
    """Train the requested task network and persist its checkpoint under
    checkpoints/<target>.pt."""
    if target not in ("lipreading", "emotion", "blink"):
        raise ValueError(f"target must be lipreading, emotion, or blink, got {target!r}")
    out = Path(config.output_dir)
    ts = config.train

    if target == "blink":
        net_cfg = STNetConfig(
            frames=config.blink.slice_length, height=config.blink.eye_crop_size,
            width=config.blink.eye_crop_size, channels=1,
            st_channels=ts.st_channels, st_temporal_kernels=_temporal_kernels(len(ts.st_channels)),
            refine_base_width=ts.refine_base_width, feature_dim=ts.feature_dim,
            mlp_hidden=ts.mlp_hidden, num_classes=2)
        label_space = ["non-blink", "blink"]
        train_set = _blink_training_data(manifest, config, "train", net_cfg)
        val_set = None
    else:
        label_key = "word" if target == "lipreading" else "emotion"
        observed = [str(e.labels[label_key]) for e in manifest.reals("train")
                    if e.labels.get(label_key) is not None]
        if not observed:
            raise ValueError(f"no training entries carry a {label_key!r} label")
        if target == "lipreading":
            label_space = build_lexicon(observed, config.lexicon_size)
        else:
            label_space = sorted({w.upper() for w in observed})
        net_cfg = STNetConfig(
            frames=ts.frames, height=ts.height, width=ts.width, channels=1,
            st_channels=ts.st_channels, st_temporal_kernels=_temporal_kernels(len(ts.st_channels)),
            refine_base_width=ts.refine_base_width, feature_dim=ts.feature_dim,
            mlp_hidden=ts.mlp_hidden, num_classes=len(label_space))
        train_set = _labeled_clips_for(manifest, config, label_key, "train", label_space, net_cfg)
        try:
            val_set = _labeled_clips_for(manifest, config, label_key, "val", label_space, net_cfg)
        except ValueError:
            val_set = None

    ckpt_path = out / "checkpoints" / f"{target}.pt"
    run = TrainRun(dataset_id=f"{target}", epochs=ts.epochs, batch_size=ts.batch_size,
                   learning_rate=ts.learning_rate, seed=config.seed,
                   checkpoint_path=ckpt_path, warm_start=warm_start,
                   label_space=label_space)
    _, run = train_classifier(net_cfg, train_set, run, head=head, val_data=val_set)
    return ckpt_path, run


def export_features(manifest: DatasetManifest, config: BenchConfig, checkpoint: Path,
                    split: str = "test", out_path: Path | None = None) -> Path:
    """Run every real clip of a split through a checkpoint and export the
    clip-level features for external projection tools."""
    net, payload = load_checkpoint(checkpoint)
    out = Path(config.output_dir)
    entries = sorted(manifest.reals(split), key=lambda e: e.id)
    if not entries:
        raise ValueError(f"no {split!r} entries to export")
    clips = []
    ids = []
    for entry in entries:
        frames = io.load_crop_archive(out / "crops" / f"{entry.id}.npz")["frames"]
        clips.append(clip_to_net_input(frames, net.config))
        ids.append(entry.id)
    export = extract_features(net, np.stack(clips), ids=ids,
                              fingerprint=payload["fingerprint"])
    out_path = out_path or out / "features" / f"{Path(checkpoint).stem}_{split}.npz"
    save_features(out_path, export)
    return Path(out_path)
