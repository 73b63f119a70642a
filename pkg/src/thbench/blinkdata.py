"""Blink/non-blink slice dataset construction.

Talking-head datasets do not annotate blinks, so training data for the
blink classifier is derived from landmarks: per-frame eye-openness rates
are thresholded into open/closed labels, and fixed-length slices of
eye-region crops are labeled positive when an open<->closed transition
falls inside them and negative when they are uniformly open or closed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geom import LEFT_EYE_IDX, RIGHT_EYE_IDX, LandmarkSequence

OPEN = 1
CLOSED = 0


@dataclass(frozen=True)
class BlinkSliceConfig:
    """slice_length is the window t in frames; the threshold policy is
    either ("percentile", p) over the observed open-rate distribution or
    ("fixed", value)."""

    slice_length: int = 12
    stride: int = 1
    threshold_policy: str = "percentile"
    threshold_value: float = 10.0
    eye_crop_margin: float = 0.2
    eye_crop_size: int = 32

    def __post_init__(self):
        if self.slice_length < 2:
            raise ValueError("slice_length must be >= 2")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.threshold_policy not in ("percentile", "fixed"):
            raise ValueError(f"unknown threshold policy {self.threshold_policy!r}")


@dataclass
class BlinkSlice:
    video_id: str
    start: int
    length: int
    label: int  # 1 = blink (transition inside), 0 = non-blink
    crops: np.ndarray | None = None  # (t, S, S) eye-region frames


def resolve_threshold(open_rates, cfg: BlinkSliceConfig) -> float:
    """Open/closed decision threshold under the configured policy.

    With the percentile policy the threshold comes from the distribution of
    the rates passed in; pass the pooled corpus rates here to get one
    corpus-level threshold, then reuse it per video via a fixed-policy
    config.
    """
    rates = np.asarray(open_rates, dtype=np.float64).reshape(-1)
    if rates.size == 0:
        raise ValueError("cannot derive a threshold from no rates")
    if cfg.threshold_policy == "fixed":
        return float(cfg.threshold_value)
    return float(np.percentile(rates, cfg.threshold_value))


def label_frames(open_rates, cfg: BlinkSliceConfig, threshold: float | None = None) -> np.ndarray:
    """Per-frame open/closed labels: closed iff the rate falls below the
    threshold. The threshold may be precomputed (corpus-level percentile)
    or derived from these rates per the config policy."""
    rates = np.asarray(open_rates, dtype=np.float64).reshape(-1)
    if rates.size == 0:
        raise ValueError("open-rate sequence is empty")
    if not np.all(np.isfinite(rates)) or np.any(rates < 0):
        raise ValueError("open rates must be finite and non-negative")
    if threshold is None:
        threshold = resolve_threshold(rates, cfg)
    return np.where(rates < threshold, CLOSED, OPEN)


def slice_count(total_frames: int, slice_length: int, stride: int) -> int:
    if total_frames < slice_length:
        return 0
    return (total_frames - slice_length) // stride + 1


def sample_slices(
    labels,
    cfg: BlinkSliceConfig,
    video_id: str = "",
    frames: np.ndarray | None = None,
) -> list[BlinkSlice]:
    """Sliding windows of length t at the configured stride over per-frame
    open/closed labels. A slice is a blink (label 1) iff the labels change
    anywhere inside it; otherwise non-blink (label 0). Videos shorter than
    one slice produce no slices.

    ``frames`` may carry per-frame eye crops (T, S, S[, C]); matching slices
    of it are attached to the output.
    """
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    t = cfg.slice_length
    out: list[BlinkSlice] = []
    if lab.size < t:
        return out
    for start in range(0, lab.size - t + 1, cfg.stride):
        window = lab[start:start + t]
        has_transition = bool(np.any(window[1:] != window[:-1]))
        crops = None
        if frames is not None:
            crops = np.asarray(frames)[start:start + t]
        out.append(BlinkSlice(video_id=video_id, start=start, length=t,
                              label=1 if has_transition else 0, crops=crops))
    return out


def balance_slices(slices: list[BlinkSlice], seed: int = 0) -> list[BlinkSlice]:
    """Subsample the majority class to the minority count, deterministic in
    the seed. Keeps original ordering of the survivors."""
    pos = [s for s in slices if s.label == 1]
    neg = [s for s in slices if s.label == 0]
    if not pos or not neg:
        return list(slices)
    rng = np.random.default_rng(seed)
    if len(pos) > len(neg):
        keep = set(rng.choice(len(pos), size=len(neg), replace=False).tolist())
        pos = [s for i, s in enumerate(pos) if i in keep]
    elif len(neg) > len(pos):
        keep = set(rng.choice(len(neg), size=len(pos), replace=False).tolist())
        neg = [s for i, s in enumerate(neg) if i in keep]
    merged = pos + neg
    merged.sort(key=lambda s: (s.video_id, s.start))
    return merged


def eye_region_crops(frames, lms: LandmarkSequence, cfg: BlinkSliceConfig) -> np.ndarray:
    """Per-frame square crops around both eyes with a relative margin,
    resized to cfg.eye_crop_size. Output (T, S, S) grayscale float32 in
    [0, 1]."""
    import cv2

    frame_arr = np.asarray(frames)
    if frame_arr.shape[0] != len(lms):
        raise ValueError("frames and landmarks must align")
    size = cfg.eye_crop_size
    out = np.empty((len(lms), size, size), dtype=np.float32)
    eye_idx = list(LEFT_EYE_IDX) + list(RIGHT_EYE_IDX)
    h, w = frame_arr.shape[1], frame_arr.shape[2]
    for t in range(len(lms)):
        pts = lms.points[t, eye_idx, :2]
        x0, y0 = pts.min(axis=0)
        x1, y1 = pts.max(axis=0)
        span = max(x1 - x0, y1 - y0)
        pad = cfg.eye_crop_margin * span
        cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        half = span / 2.0 + pad
        xa = int(max(0, round(cx - half)))
        ya = int(max(0, round(cy - half)))
        xb = int(min(w, round(cx + half)))
        yb = int(min(h, round(cy + half)))
        if xb <= xa or yb <= ya:
            raise ValueError(f"eye crop degenerate at frame {t}")
        patch = frame_arr[t, ya:yb, xa:xb]
        if patch.ndim == 3:
            patch = patch.mean(axis=2)
        patch = patch.astype(np.float32)
        if np.issubdtype(frame_arr.dtype, np.integer):
            patch = patch / 255.0
        out[t] = cv2.resize(patch, (size, size), interpolation=cv2.INTER_AREA)
    return out


def write_slice_manifest(path: Path, slices: list[BlinkSlice]) -> None:
    """JSON-lines manifest: one record per slice (video id, start, length,
    label); crop tensors are saved separately."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for s in slices:
            fh.write(json.dumps({"video_id": s.video_id, "start": s.start,
                                 "length": s.length, "label": s.label}) + "\n")


def read_slice_manifest(path: Path) -> list[BlinkSlice]:
    out = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            out.append(BlinkSlice(video_id=rec["video_id"], start=rec["start"],
                                  length=rec["length"], label=rec["label"]))
    return out
