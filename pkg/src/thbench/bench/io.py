"""File formats the harness reads and writes.

Frame sources are either a directory of image files (sorted by name) or a
single video container readable by OpenCV. Landmark files carry one record
per frame with 68 points of x,y[,z] pixel coordinates, as CSV or JSON.
Preprocessing artifacts (crops, pose traces) are .npz archives keyed by
entry id with the content hash that makes reruns idempotent.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import cv2
import numpy as np

from ..geom import LandmarkSequence

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
VIDEO_SUFFIXES = (".mp4", ".avi", ".mov", ".mkv", ".webm")


def load_frames(source: Path) -> np.ndarray:
    """(T, H, W, 3) uint8 RGB frames from an image directory or container."""
    source = Path(source)
    if source.is_dir():
        files = sorted(p for p in source.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise FileNotFoundError(f"no image files in {source}")
        frames = []
        for file in files:
            img = cv2.imread(str(file), cv2.IMREAD_COLOR)
            if img is None:
                raise OSError(f"unreadable image {file}")
            frames.append(cv2.cvtColor(img, cv2.COLOR_BGR2RGB))
        return np.stack(frames)
    if source.suffix.lower() in VIDEO_SUFFIXES:
        cap = cv2.VideoCapture(str(source))
        if not cap.isOpened():
            raise OSError(f"cannot open video container {source}")
        frames = []
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            frames.append(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
        cap.release()
        if not frames:
            raise OSError(f"no frames decoded from {source}")
        return np.stack(frames)
    raise ValueError(f"unsupported frame source {source} (directory or {VIDEO_SUFFIXES})")


def save_frames(directory: Path, frames: np.ndarray) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(frames):
        rgb = np.asarray(frame)
        if rgb.ndim == 2:
            rgb = np.stack([rgb] * 3, axis=2)
        cv2.imwrite(str(directory / f"{t:05d}.png"), cv2.cvtColor(rgb.astype(np.uint8), cv2.COLOR_RGB2BGR))


def load_landmarks(path: Path, frame_rate: float = 25.0) -> LandmarkSequence:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _landmarks_from_csv(path, frame_rate)
    if path.suffix.lower() == ".json":
        return _landmarks_from_json(path, frame_rate)
    raise ValueError(f"unsupported landmark format {path.suffix!r}")


def _landmarks_from_csv(path: Path, frame_rate: float) -> LandmarkSequence:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dims = 3 if "z0" in header else 2
        rows = []
        for row in reader:
            coords = [float(v) for v in row[1:]]  # column 0 is the frame index
            rows.append(np.array(coords).reshape(68, dims))
    return LandmarkSequence(points=np.stack(rows), frame_rate=frame_rate)


def _landmarks_from_json(path: Path, frame_rate: float) -> LandmarkSequence:
    raw = json.loads(path.read_text())
    if isinstance(raw, dict):
        frame_rate = float(raw.get("frame_rate", frame_rate))
        frames = raw["frames"]
    else:
        frames = raw
    return LandmarkSequence(points=np.array(frames, dtype=np.float64), frame_rate=frame_rate)


def save_landmarks_csv(path: Path, lms: LandmarkSequence) -> None:
    dims = lms.dims
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        cols = ["frame"]
        for i in range(68):
            cols += [f"x{i}", f"y{i}"] + ([f"z{i}"] if dims == 3 else [])
        writer.writerow(cols)
        for t in range(len(lms)):
            writer.writerow([t] + [repr(v) for v in lms.points[t].reshape(-1).tolist()])


def save_landmarks_json(path: Path, lms: LandmarkSequence) -> None:
    Path(path).write_text(json.dumps({
        "frame_rate": lms.frame_rate,
        "frames": lms.points.tolist(),
    }))


def content_hash(*parts) -> str:
    """Hash of input content + config that decides preprocessing work."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, Path):
            h.update(Path(part).read_bytes())
        elif isinstance(part, bytes):
            h.update(part)
        else:
            h.update(json.dumps(part, sort_keys=True, default=str).encode())
    return h.hexdigest()[:32]


def save_crop_archive(path: Path, frames: np.ndarray, rects: np.ndarray,
                      frame_rate: float, face_length: float, digest: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, frames=frames, rects=rects,
                        frame_rate=np.float64(frame_rate),
                        face_length=np.float64(face_length),
                        digest=np.str_(digest))


def load_crop_archive(path: Path) -> dict:
    data = np.load(path, allow_pickle=False)
    return {"frames": data["frames"], "rects": data["rects"],
            "frame_rate": float(data["frame_rate"]),
            "face_length": float(data["face_length"]),
            "digest": str(data["digest"])}


def stored_digest(path: Path) -> str | None:
    path = Path(path)
    if not path.exists():
        return None
    try:
        with np.load(path, allow_pickle=False) as data:
            return str(data["digest"])
    except Exception:
        return None  # treat unreadable caches as absent


def save_pose_archive(path: Path, angles: np.ndarray, residuals: np.ndarray, digest: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, angles=angles, residuals=residuals, digest=np.str_(digest))


def load_pose_archive(path: Path) -> dict:
    data = np.load(path, allow_pickle=False)
    return {"angles": data["angles"], "residuals": data["residuals"],
            "digest": str(data["digest"])}
