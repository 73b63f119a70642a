"""Deterministic synthetic fixtures.

These generators exist so every pipeline stage can be exercised end-to-end
without any real dataset or pretrained weights: moving-pattern clips whose
class is encoded in their motion statistics, landmark animations with
controlled drift and blinks, and paired real/generated frame sets with
analytically known metric values.
"""

from __future__ import annotations

import numpy as np

from .geom import CanonicalFace


def gaussian_blob(size: int, cx: float, cy: float, sigma: float = 3.0) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma ** 2))


def moving_pattern_dataset(
    n_clips: int = 500,
    frames: int = 8,
    size: int = 32,
    seed: int = 0,
    noise: float = 0.02,
):
    """Three-class clip corpus separable by motion statistics.

    Class 0 drifts horizontally, class 1 drifts vertically, class 2 stays
    put but pulses in brightness. Returns (clips (N, T, S, S, 1) float32 in
    [0, 1], labels (N,), ids).
    """
    rng = np.random.default_rng(seed)
    clips = np.empty((n_clips, frames, size, size, 1), dtype=np.float32)
    labels = np.empty(n_clips, dtype=np.int64)
    margin = 0.3 * size
    for i in range(n_clips):
        label = i % 3
        cx = rng.uniform(margin, size - margin)
        cy = rng.uniform(margin, size - margin)
        speed = rng.uniform(1.5, 2.5) * rng.choice([-1.0, 1.0])
        for t in range(frames):
            if label == 0:
                frame = gaussian_blob(size, cx + speed * t, cy)
            elif label == 1:
                frame = gaussian_blob(size, cx, cy + speed * t)
            else:
                amp = 0.55 + 0.45 * np.sin(2.0 * np.pi * t / frames + rng.uniform(0, 0.1))
                frame = amp * gaussian_blob(size, cx, cy)
            frame = frame + rng.normal(0.0, noise, frame.shape)
            clips[i, t, :, :, 0] = np.clip(frame, 0.0, 1.0)
        labels[i] = label
    ids = [f"toy{i:05d}" for i in range(n_clips)]
    return clips, labels, ids


def face_landmark_trace(
    n_frames: int,
    center=(300.0, 300.0),
    drift=(0.0, 0.0),
    blink_at: int | None = None,
    blink_len: int = 5,
    scale: float = 1.0,
    frame_rate: float = 25.0,
):
    """2D landmark animation of the canonical face with optional linear
    drift and one blink (eyelid gap closing to zero and reopening)."""
    from .geom import LandmarkSequence

    base = CanonicalFace.default().points[:, :2] * scale
    frames = []
    for t in range(n_frames):
        pts = base + np.asarray(center) + np.asarray(drift) * t
        if blink_at is not None:
            phase = (t - blink_at) / max(blink_len - 1, 1)
            if 0.0 <= phase <= 1.0:
                closure = 1.0 - abs(2.0 * phase - 1.0)  # 0 -> 1 -> 0
                for start in (36, 42):
                    eye = pts[start:start + 6]
                    lid_center_y = (eye[1:3, 1].mean() + eye[4:6, 1].mean()) / 2.0
                    eye[1:3, 1] = eye[1:3, 1] * (1 - closure) + lid_center_y * closure
                    eye[4:6, 1] = eye[4:6, 1] * (1 - closure) + lid_center_y * closure
        frames.append(pts)
    return LandmarkSequence(points=np.stack(frames), frame_rate=frame_rate)


def rotating_face_landmarks(
    n_frames: int,
    yaw_sweep=(0.0, 0.0),
    pitch: float = 0.0,
    center=(300.0, 300.0, 0.0),
    scale: float = 1.0,
    blink_at: int | None = None,
    blink_len: int = 5,
    frame_rate: float = 25.0,
):
    """3D landmark sequence: the canonical face under a linear yaw sweep,
    optionally blinking. Pose estimation recovers the sweep exactly, so
    motion scores and pose bins of fixtures are known in closed form."""
    from .geom import LandmarkSequence, euler_to_matrix

    base = CanonicalFace.default().points * scale
    yaws = np.linspace(yaw_sweep[0], yaw_sweep[1], n_frames)
    frames = []
    for t in range(n_frames):
        pts = base.copy()
        if blink_at is not None:
            phase = (t - blink_at) / max(blink_len - 1, 1)
            if 0.0 <= phase <= 1.0:
                closure = 1.0 - abs(2.0 * phase - 1.0)
                for start in (36, 42):
                    eye = pts[start:start + 6]
                    lid_center_y = (eye[1:3, 1].mean() + eye[4:6, 1].mean()) / 2.0
                    eye[1:3, 1] = eye[1:3, 1] * (1 - closure) + lid_center_y * closure
                    eye[4:6, 1] = eye[4:6, 1] * (1 - closure) + lid_center_y * closure
        rot = euler_to_matrix(pitch, float(yaws[t]), 0.0)
        frames.append((rot @ pts.T).T + np.asarray(center))
    return LandmarkSequence(points=np.stack(frames), frame_rate=frame_rate)


def textured_face_frames(lms, size=(600, 600), seed: int = 0) -> np.ndarray:
    """Gray frames with a textured disc tracking the landmark centroid, so
    crops contain content that varies with the face position."""
    rng = np.random.default_rng(seed)
    texture = rng.uniform(40, 210, size).astype(np.float64)
    frames = np.empty((len(lms), size[0], size[1]), dtype=np.uint8)
    yy, xx = np.mgrid[0:size[0], 0:size[1]].astype(np.float64)
    for t in range(len(lms)):
        cx, cy = lms.points[t, :, 0].mean(), lms.points[t, :, 1].mean()
        mask = ((xx - cx) ** 2 + (yy - cy) ** 2) < 90.0 ** 2
        frame = np.full(size, 128.0)
        frame[mask] = texture[mask]
        frames[t] = np.clip(frame, 0, 255).astype(np.uint8)
    return frames
