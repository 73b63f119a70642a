"""Training, checkpointing, and feature extraction for the spatio-temporal
classifier.

Runs are seeded and data ordering is deterministic, so a (config, data,
seed) triple reproduces its metrics. Checkpoints are self-describing: they
carry the network config, weights, label set, training manifest, and a
content fingerprint that downstream pairing checks compare.
"""

from __future__ import annotations

import csv
import hashlib
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import TrainingFault
from .arcloss import ArcMarginHead
from .model import STNet, STNetConfig, clips_to_tensor

CHECKPOINT_FORMAT = 1


@dataclass
class LabeledClips:
    """In-memory labeled clip set: clips (N, T, H, W[, C]) in [0, 1]."""

    clips: np.ndarray
    labels: np.ndarray
    ids: list[str] | None = None

    def __post_init__(self):
        self.clips = np.asarray(self.clips, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.clips.shape[0] != self.labels.shape[0]:
            raise ValueError("clips and labels must align")
        if self.ids is None:
            self.ids = [f"clip{i:05d}" for i in range(self.clips.shape[0])]

    def __len__(self) -> int:
        return self.clips.shape[0]


@dataclass
class TrainRun:
    """One training run's identity and bookkeeping."""

    dataset_id: str
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    checkpoint_path: Path | None = None
    warm_start: Path | None = None  # softmax checkpoint to fine-tune from
    arc_scale: float = 64.0
    arc_margin: float = 0.5
    label_space: list[str] | None = None
    # stop as soon as this validation (or train) accuracy is reached
    target_accuracy: float | None = None
    # filled in by train_classifier
    history: list[dict] = field(default_factory=list)
    final_train_accuracy: float | None = None
    final_val_accuracy: float | None = None


def state_fingerprint(state_dict: dict, labels: list[str] | None = None) -> str:
    """Content hash of a model: stable across saves of identical weights."""
    h = hashlib.sha256()
    for name in sorted(state_dict):
        h.update(name.encode())
        tensor = state_dict[name]
        h.update(tensor.detach().cpu().numpy().tobytes())
    for label in labels or []:
        h.update(str(label).encode())
    return h.hexdigest()[:16]


def save_checkpoint(path: Path, net: STNet, run: TrainRun,
                    arc_head: ArcMarginHead | None = None) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = run.label_space or [str(i) for i in range(net.config.num_classes)]
    fingerprint = state_fingerprint(net.state_dict(), labels)
    payload = {
        "format_version": CHECKPOINT_FORMAT,
        "config": asdict(net.config),
        "state_dict": net.state_dict(),
        "arc_state": arc_head.state_dict() if arc_head is not None else None,
        "labels": labels,
        "manifest": {
            "dataset_id": run.dataset_id,
            "epochs": run.epochs,
            "seed": run.seed,
            "history": run.history,
            "final_train_accuracy": run.final_train_accuracy,
            "final_val_accuracy": run.final_val_accuracy,
        },
        "fingerprint": fingerprint,
    }
    torch.save(payload, str(path))
    return fingerprint


def load_checkpoint(path: Path) -> tuple[STNet, dict]:
    payload = torch.load(str(path), map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format in {path}")
    net = STNet(STNetConfig(**payload["config"]))
    net.load_state_dict(payload["state_dict"])
    net.eval()
    return net, payload


def _accuracy(net: STNet, clips: torch.Tensor, labels: torch.Tensor, batch_size: int) -> float:
    net.eval()
    hits = 0
    with torch.no_grad():
        for start in range(0, clips.shape[0], batch_size):
            _, logits = net(clips[start:start + batch_size])
            hits += int((logits.argmax(dim=1) == labels[start:start + batch_size]).sum())
    return hits / clips.shape[0]


def train_classifier(
    cfg: STNetConfig,
    train_data: LabeledClips,
    run: TrainRun,
    head: str = "softmax",
    val_data: LabeledClips | None = None,
) -> tuple[STNet, TrainRun]:
    """Train the backbone with a softmax or margin-penalized head.

    The margin head is meant for refinement and may warm-start from a
    softmax checkpoint via ``run.warm_start``. Non-finite loss aborts with
    TrainingFault carrying the last finite-state checkpoint.
    """
    if head not in ("softmax", "arcloss"):
        raise ValueError(f"head must be 'softmax' or 'arcloss', got {head!r}")
    n_classes = int(train_data.labels.max()) + 1
    if n_classes < 2:
        raise ValueError("need at least 2 classes present in the training data")
    if n_classes > cfg.num_classes:
        raise ValueError("labels exceed the configured class count")
    if val_data is not None and train_data.ids and val_data.ids:
        overlap = set(train_data.ids) & set(val_data.ids)
        if overlap:
            raise ValueError(f"train/validation splits overlap: {sorted(overlap)[:3]}...")

    torch.manual_seed(run.seed)
    rng = np.random.default_rng(run.seed)

    net = STNet(cfg)
    arc_head = None
    if head == "arcloss":
        arc_head = ArcMarginHead(cfg.feature_dim, cfg.num_classes,
                                 scale=run.arc_scale, margin=run.arc_margin)
    if run.warm_start is not None:
        warm_net, _ = load_checkpoint(run.warm_start)
        net.load_state_dict(warm_net.state_dict())

    params = list(net.parameters()) + (list(arc_head.parameters()) if arc_head else [])
    optimizer = torch.optim.Adam(params, lr=run.learning_rate)

    x_train = clips_to_tensor(train_data.clips)
    y_train = torch.from_numpy(train_data.labels)
    x_val = clips_to_tensor(val_data.clips) if val_data is not None else None
    y_val = torch.from_numpy(val_data.labels) if val_data is not None else None

    last_good_state = None
    run.history = []
    for epoch in range(run.epochs):
        net.train()
        order = rng.permutation(len(train_data))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), run.batch_size):
            batch_idx = torch.from_numpy(order[start:start + run.batch_size].copy())
            clips = x_train[batch_idx]
            labels = y_train[batch_idx]
            optimizer.zero_grad()
            features, logits = net(clips)
            if head == "softmax":
                loss = torch.nn.functional.cross_entropy(logits, labels)
            else:
                loss = arc_head(features, labels)
            if not torch.isfinite(loss):
                raise TrainingFault(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}",
                    last_good_checkpoint=last_good_state,
                )
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach())
            n_batches += 1

        train_acc = _accuracy(net, x_train, y_train, run.batch_size)
        record = {"epoch": epoch, "loss": epoch_loss / max(n_batches, 1), "train_accuracy": train_acc}
        if x_val is not None:
            record["val_accuracy"] = _accuracy(net, x_val, y_val, run.batch_size)
        run.history.append(record)
        last_good_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
        if run.target_accuracy is not None:
            reached = record.get("val_accuracy", train_acc)
            if reached >= run.target_accuracy:
                break

    run.final_train_accuracy = run.history[-1]["train_accuracy"] if run.history else None
    run.final_val_accuracy = run.history[-1].get("val_accuracy") if run.history else None

    net.eval()
    if run.checkpoint_path is not None:
        save_checkpoint(run.checkpoint_path, net, run, arc_head=arc_head)
    return net, run


def forward_clips(net: STNet, clips: np.ndarray, batch_size: int = 32):
    """Inference over (N, T, H, W[, C]) clips -> (features, logits) numpy."""
    x = clips_to_tensor(clips)
    net.eval()
    feats, logits = [], []
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            f, lg = net(x[start:start + batch_size])
            feats.append(f.numpy())
            logits.append(lg.numpy())
    return np.concatenate(feats), np.concatenate(logits)


@dataclass
class FeatureExport:
    """Clip-level feature matrix tagged with ids, optional labels, and the
    checkpoint fingerprint that produced it."""

    ids: list[str]
    features: np.ndarray
    labels: np.ndarray | None = None
    fingerprint: str | None = None


def extract_features(net: STNet, clips: np.ndarray, ids: list[str] | None = None,
                     labels: np.ndarray | None = None,
                     fingerprint: str | None = None,
                     batch_size: int = 32) -> FeatureExport:
    feats, _ = forward_clips(net, clips, batch_size=batch_size)
    if ids is None:
        ids = [f"clip{i:05d}" for i in range(feats.shape[0])]
    if fingerprint is None:
        fingerprint = state_fingerprint(net.state_dict())
    return FeatureExport(ids=list(ids), features=feats,
                         labels=None if labels is None else np.asarray(labels),
                         fingerprint=fingerprint)


def save_features(path: Path, export: FeatureExport) -> None:
    """Binary .npz or text .csv, chosen by suffix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".npz":
        np.savez(
            path,
            ids=np.array(export.ids),
            features=export.features,
            labels=np.array([]) if export.labels is None else export.labels,
            fingerprint=np.array(export.fingerprint or ""),
        )
    elif path.suffix == ".csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            dim = export.features.shape[1]
            writer.writerow(["id", "label"] + [f"f{i}" for i in range(dim)])
            for i, clip_id in enumerate(export.ids):
                label = "" if export.labels is None else export.labels[i]
                writer.writerow([clip_id, label] + [repr(v) for v in export.features[i].tolist()])
    else:
        raise ValueError(f"unsupported feature export suffix: {path.suffix}")


def load_features(path: Path) -> FeatureExport:
    path = Path(path)
    if path.suffix == ".npz":
        data = np.load(path, allow_pickle=False)
        labels = data["labels"]
        fingerprint = str(data["fingerprint"])
        return FeatureExport(
            ids=[str(s) for s in data["ids"]],
            features=data["features"],
            labels=None if labels.size == 0 else labels,
            fingerprint=fingerprint or None,
        )
    if path.suffix == ".csv":
        ids, labels, rows = [], [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                ids.append(row[0])
                labels.append(row[1])
                rows.append([float(v) for v in row[2:]])
        has_labels = any(label != "" for label in labels)
        return FeatureExport(
            ids=ids,
            features=np.array(rows),
            labels=np.array([int(l) for l in labels]) if has_labels else None,
        )
    raise ValueError(f"unsupported feature export suffix: {path.suffix}")


def build_lexicon(transcripts, size: int) -> list[str]:
    """Label set: the ``size`` most frequent words across word-aligned
    transcripts, ties broken lexicographically. Deterministic. If fewer
    distinct words exist, all of them are returned.

    ``transcripts`` is an iterable of strings (whitespace-tokenized) or of
    pre-tokenized word lists.
    """
    counts = Counter()
    for item in transcripts:
        words = item.split() if isinstance(item, str) else list(item)
        counts.update(w.upper() for w in words)
    if not counts:
        raise ValueError("transcripts are empty")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [w for w, _ in ranked[:size]]
