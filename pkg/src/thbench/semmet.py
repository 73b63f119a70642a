"""Video-level semantic similarity metrics.

All of these operate on clip-level features extracted by one trained
checkpoint per task: lip-sync quality as the squared Euclidean distance
between lipreading features of a generated clip and its paired real clip
(lower is better), emotion and blink quality as cosine similarity between
the respective task features (higher is better), plus the top-k and
per-word classification accuracies used to validate the feature extractors.

Pairs must come from the same checkpoint; fingerprints are compared when
both sides carry one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import FeatureVector
from .errors import DegenerateFeatureError, PairingError


@dataclass
class PairedClipRecord:
    """Features of one (real, generated) clip pair under one method."""

    real_id: str
    fake_id: str
    method: str
    label: str | None = None
    real_features: dict | None = None  # network name -> FeatureVector
    fake_features: dict | None = None


def _vec(x) -> tuple[np.ndarray, str | None]:
    if isinstance(x, FeatureVector):
        return x.values, x.source
    return np.asarray(x, dtype=np.float64).reshape(-1), None


def _check_pair(a, b):
    va, src_a = _vec(a)
    vb, src_b = _vec(b)
    if va.shape != vb.shape:
        raise ValueError(f"feature dimension mismatch: {va.shape} vs {vb.shape}")
    if src_a is not None and src_b is not None and src_a != src_b:
        raise PairingError(f"features come from different checkpoints: {src_a} vs {src_b}")
    return va, vb


def lrsd(real_feat, fake_feat) -> float:
    """Lip-sync similarity distance: squared L2 between lipreading features
    of the paired clips. 0 means identical semantic lip content."""
    va, vb = _check_pair(real_feat, fake_feat)
    diff = va - vb
    return float(diff @ diff)


def feature_l2(real_feat, fake_feat) -> float:
    """Unsquared L2 companion statistic to lrsd; both are reported."""
    va, vb = _check_pair(real_feat, fake_feat)
    return float(np.linalg.norm(va - vb))


def _cosine(a, b) -> float:
    va, vb = _check_pair(a, b)
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise DegenerateFeatureError("cosine of a zero-norm feature is undefined")
    return float(np.dot(va, vb) / (na * nb))


def esd(real_feat, fake_feat) -> float:
    """Emotion similarity distance: cosine similarity of emotion-network
    features, in [-1, 1], higher is better."""
    return _cosine(real_feat, fake_feat)


def bsd(real_slice_feat, fake_slice_feat) -> float:
    """Blink similarity distance for one slice pair: cosine similarity of
    blink-network features. Video-level scores average over slice pairs via
    bsd_video."""
    return _cosine(real_slice_feat, fake_slice_feat)


def bsd_video(real_slice_feats, fake_slice_feats) -> float:
    """Mean slice-level blink similarity over a paired video's slices."""
    if len(real_slice_feats) != len(fake_slice_feats):
        raise PairingError(
            f"slice counts differ: {len(real_slice_feats)} vs {len(fake_slice_feats)}")
    if len(real_slice_feats) == 0:
        raise ValueError("need at least one slice pair")
    scores = [bsd(r, f) for r, f in zip(real_slice_feats, fake_slice_feats)]
    return float(np.mean(scores))


def topk_accuracy(logits: np.ndarray, labels, k: int) -> float:
    """Fraction of rows whose true label ranks in the top k logits.

    Ranking is by logit descending with ties broken by class index
    ascending, so results are deterministic.
    """
    mat = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if mat.ndim != 2 or mat.shape[0] != y.shape[0]:
        raise ValueError("logits must be (N, V) aligned with labels")
    n, v = mat.shape
    if not 1 <= k <= v:
        raise ValueError(f"k must be in [1, {v}], got {k}")
    if y.min() < 0 or y.max() >= v:
        raise ValueError("label out of range")
    # stable sort on negated logits keeps the smaller class index first on ties
    order = np.argsort(-mat, axis=1, kind="stable")
    hits = (order[:, :k] == y[:, None]).any(axis=1)
    return float(hits.mean())


def per_word_accuracy(predictions, labels, vocabulary) -> list[tuple[str, float, int]]:
    """Accuracy grouped by word label, as (word, accuracy, count) rows.

    Sorted ascending by accuracy (hardest words first), ties by word, ready
    for report emission. Words from the vocabulary that never occur are
    omitted.
    """
    preds = np.asarray(predictions)
    labs = np.asarray(labels)
    if preds.shape != labs.shape:
        raise ValueError("predictions and labels must align")
    vocab = list(vocabulary)
    index = {w: i for i, w in enumerate(vocab)}
    for lab in labs:
        if lab not in index:
            raise ValueError(f"label {lab!r} not in vocabulary")
    rows = []
    for word in vocab:
        mask = labs == word
        if not mask.any():
            continue
        acc = float((preds[mask] == word).mean())
        rows.append((word, acc, int(mask.sum())))
    rows.sort(key=lambda r: (r[1], r[0]))
    return rows
