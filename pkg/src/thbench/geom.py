"""Landmark-based geometry for the preprocessing protocol.

Covers temporal smoothing of landmark-derived sequences, face tracking and
square cropping, rigid head-pose estimation against a canonical 3D face,
head-motion scoring, and eye-openness measurement.

All functions are pure; nothing here holds mutable state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import DegenerateFaceError, DegenerateGeometryError, OutOfFrameError

# Landmark index sets for the 68-point layout. The eye-area indices feed the
# face tracker (center-point sequence); the per-eye six-tuples feed
# eye_open_rate with corners at positions 0 and 3.
EYE_AREA_IDX = tuple(range(36, 48))
LEFT_EYE_IDX = (36, 37, 38, 39, 40, 41)
RIGHT_EYE_IDX = (42, 43, 44, 45, 46, 47)


@dataclass(frozen=True)
class SmoothingConfig:
    """Temporal smoothing window. ``window_size`` must be odd and >= 1."""

    window_size: int = 11
    boundary_policy: str = "reflect"  # or "clamp"

    def __post_init__(self):
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError(f"window_size must be odd and positive, got {self.window_size}")
        if self.boundary_policy not in ("reflect", "clamp"):
            raise ValueError(f"unknown boundary_policy {self.boundary_policy!r}")


@dataclass(frozen=True)
class CropConfig:
    """Face-crop geometry. The top-left corner sits (r1*l, r2*l) up-left of
    the smoothed eye center and the square side is side_factor*l, where l is
    the per-video mean face length."""

    r1: float = 10.0 / 9.0
    r2: float = 8.0 / 9.0
    side_factor: float = 41.0 / 18.0

    def __post_init__(self):
        if self.r1 <= 0 or self.r2 <= 0 or self.side_factor <= 0:
            raise ValueError("crop ratios must be positive")


@dataclass
class LandmarkSequence:
    """Per-frame facial landmarks for one clip: (T, 68, D) with D in {2, 3}."""

    points: np.ndarray
    frame_rate: float = 25.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 3 or self.points.shape[1] != 68 or self.points.shape[2] not in (2, 3):
            raise ValueError(f"expected (T, 68, 2|3) landmark array, got {self.points.shape}")
        if self.points.shape[0] < 1:
            raise ValueError("landmark sequence must contain at least one frame")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("landmark coordinates must be finite")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dims(self) -> int:
        return self.points.shape[2]


@dataclass
class PoseTrace:
    """Per-frame Euler angles in degrees, column order (pitch, yaw, roll),
    plus the per-frame RMS registration residual in pixels."""

    angles: np.ndarray
    registration_residual: np.ndarray

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64).reshape(-1, 3)
        self.registration_residual = np.asarray(self.registration_residual, dtype=np.float64).reshape(-1)
        if self.angles.shape[0] != self.registration_residual.shape[0]:
            raise ValueError("angles and residuals must have equal length")
        if np.any(self.registration_residual < 0):
            raise ValueError("residuals must be non-negative")

    def __len__(self) -> int:
        return self.angles.shape[0]

    def axis(self, name: str) -> np.ndarray:
        return self.angles[:, _AXIS_COLUMNS[name]]


_AXIS_COLUMNS = {"pitch": 0, "yaw": 1, "roll": 2}


@dataclass
class CanonicalFace:
    """Reference 68-point 3D face shape, zero-mean, rank-3."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.shape != (68, 3):
            raise ValueError(f"canonical face must be (68, 3), got {self.points.shape}")
        centered = self.points - self.points.mean(axis=0)
        if not np.allclose(self.points.mean(axis=0), 0.0, atol=1e-3):
            raise ValueError("canonical face must be zero-mean")
        if np.linalg.matrix_rank(centered) < 3:
            raise DegenerateGeometryError("canonical face point cloud is rank-deficient")

    @classmethod
    def default(cls) -> "CanonicalFace":
        """The mean-shape asset shipped with the package."""
        data = resources.files("thbench.assets").joinpath("canonical_face_68.json").read_text()
        return cls(np.array(json.loads(data)["points"], dtype=np.float64))


@dataclass
class ClipTensor:
    """Fixed-length sequence of cropped frames, (T, S, S, C) or (T, S, S)."""

    frames: np.ndarray
    frame_rate: float = 25.0
    clip_id: str | None = None
    paired_id: str | None = None

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class CropResult:
    clip: ClipTensor
    # integer (x, y, side) per frame, the export contract
    rects: np.ndarray
    # smoothed eye-center sequence (T, 2) in float pixels, pre-rounding
    centers: np.ndarray
    face_length: float


def hanning_window(window_size: int) -> np.ndarray:
    """Raised-cosine window w_j = 0.5 - 0.5*cos(2*pi*j/(N-1)) for j in [0, N).

    N must be odd and positive; N == 1 degenerates to the identity window [1].
    """
    n = int(window_size)
    if n < 1 or n % 2 == 0:
        raise ValueError(f"window size must be odd and positive, got {window_size}")
    if n == 1:
        return np.ones(1)
    j = np.arange(n, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * j / (n - 1))


def smooth_sequence(values, cfg: SmoothingConfig = SmoothingConfig()) -> np.ndarray:
    """Weight-normalized sliding-window smoothing of a scalar sequence.

    Each output sample is the window-weighted average of its neighborhood;
    out-of-range indices are resolved by the boundary policy ("reflect"
    mirrors about the ends, "clamp" repeats the end samples). Output length
    equals input length, and constant sequences pass through unchanged.
    """
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("cannot smooth an empty sequence")
    w = hanning_window(cfg.window_size)
    w = w / w.sum()
    half = cfg.window_size // 2
    if half == 0:
        return x.copy()
    mode = "reflect" if cfg.boundary_policy == "reflect" else "edge"
    # smooth the deviation from a baseline: a constant input becomes an
    # all-zero deviation, so it passes through bit-exactly regardless of
    # how the normalized weights round
    base = x[0]
    padded = np.pad(x - base, half, mode=mode)
    return base + np.convolve(padded, w[::-1], mode="valid")


def face_length(lms: LandmarkSequence) -> float:
    """Per-video mean face length: the larger side of the per-frame landmark
    bounding box, averaged over frames."""
    pts = lms.points[:, :, :2]
    spans = pts.max(axis=1) - pts.min(axis=1)  # (T, 2)
    return float(spans.max(axis=1).mean())


def eye_centers(lms: LandmarkSequence, indices=EYE_AREA_IDX) -> np.ndarray:
    """Per-frame (x, y) centroid of the eye-area landmarks."""
    return lms.points[:, list(indices), :2].mean(axis=1)


def track_and_crop(
    frames,
    lms: LandmarkSequence,
    cfg: CropConfig = CropConfig(),
    smoothing: SmoothingConfig = SmoothingConfig(),
) -> CropResult:
    """Track the face through a clip and cut one square crop per frame.

    The per-frame eye-area centers are smoothed along time, the crop's
    top-left corner is placed (r1*l, r2*l) up-left of the smoothed center,
    and the square side is side_factor*l with l the mean face length. The
    rectangle is shifted back inside the image when it sticks out; a crop
    with no overlap at all raises OutOfFrameError.
    """
    frame_arr = np.asarray(frames)
    if frame_arr.shape[0] != len(lms):
        raise ValueError(f"{frame_arr.shape[0]} frames vs {len(lms)} landmark frames")
    if frame_arr.ndim not in (3, 4):
        raise ValueError("frames must be (T, H, W) or (T, H, W, C)")
    height, width = frame_arr.shape[1], frame_arr.shape[2]

    l = face_length(lms)
    if l < 4.0:
        raise DegenerateFaceError(f"face length {l:.2f}px is below the 4px minimum")

    centers = eye_centers(lms)
    cx = smooth_sequence(centers[:, 0], smoothing)
    cy = smooth_sequence(centers[:, 1], smoothing)

    side = int(round(cfg.side_factor * l))
    side = max(1, min(side, height, width))
    x_tl = np.rint(cx - cfg.r1 * l).astype(int)
    y_tl = np.rint(cy - cfg.r2 * l).astype(int)

    # reject before clipping: the ideal rectangle must overlap the image
    ideal_side = cfg.side_factor * l
    if np.any((x_tl >= width) | (y_tl >= height) | (x_tl + ideal_side <= 0) | (y_tl + ideal_side <= 0)):
        raise OutOfFrameError("crop rectangle lies entirely outside the frame")

    x_tl = np.clip(x_tl, 0, width - side)
    y_tl = np.clip(y_tl, 0, height - side)

    crops = np.stack([frame_arr[t, y:y + side, x:x + side] for t, (x, y) in enumerate(zip(x_tl, y_tl))])
    rects = np.stack([x_tl, y_tl, np.full_like(x_tl, side)], axis=1)
    clip = ClipTensor(frames=crops, frame_rate=lms.frame_rate)
    return CropResult(clip=clip, rects=rects, centers=np.stack([cx, cy], axis=1), face_length=l)


def euler_to_matrix(pitch: float, yaw: float, roll: float) -> np.ndarray:
    """Rotation matrix for intrinsic pitch (x) -> yaw (y) -> roll (z),
    angles in degrees: R = Rx(pitch) @ Ry(yaw) @ Rz(roll).

    Axes follow the image convention: x right, y down, z away from camera.
    """
    a, b, g = np.deg2rad([pitch, yaw, roll])
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cg, sg = np.cos(g), np.sin(g)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cg, -sg, 0], [sg, cg, 0], [0, 0, 1]])
    return rx @ ry @ rz


def matrix_to_euler(rot: np.ndarray) -> tuple[float, float, float]:
    """Inverse of euler_to_matrix; returns (pitch, yaw, roll) in degrees.

    Near gimbal lock (|yaw| -> 90 deg) roll is fixed to 0 and pitch absorbs
    the remaining in-plane rotation.
    """
    r = np.asarray(rot, dtype=np.float64)
    sin_yaw = np.clip(r[0, 2], -1.0, 1.0)
    yaw = np.arcsin(sin_yaw)
    if abs(sin_yaw) < 1.0 - 1e-10:
        pitch = np.arctan2(-r[1, 2], r[2, 2])
        roll = np.arctan2(-r[0, 1], r[0, 0])
    else:
        pitch = np.arctan2(r[2, 1], r[1, 1])
        roll = 0.0
    return tuple(np.rad2deg([pitch, yaw, roll]))


@dataclass
class PoseEstimate:
    pitch: float
    yaw: float
    roll: float
    residual: float
    rotation: np.ndarray = field(repr=False)
    scale: float = 1.0
    translation: np.ndarray = field(default=None, repr=False)


def estimate_pose(
    lms3d: np.ndarray,
    canon: CanonicalFace,
    with_scale: bool = True,
) -> PoseEstimate:
    """Register the canonical face onto observed 3D landmarks and read the
    head pose off the recovered rotation.

    Solves min over (s, R, t) of sum ||obs_i - (s*R*canon_i + t)||^2 in
    closed form (SVD orthogonal alignment), then decomposes R with
    matrix_to_euler. The residual is the RMS fit error in pixels.
    """
    obs = np.asarray(lms3d, dtype=np.float64)
    if obs.shape != (68, 3):
        raise ValueError(f"expected (68, 3) landmarks, got {obs.shape}")
    if not np.all(np.isfinite(obs)):
        raise ValueError("landmarks must be finite")

    src = canon.points
    mu_src = src.mean(axis=0)
    mu_obs = obs.mean(axis=0)
    src_c = src - mu_src
    obs_c = obs - mu_obs

    cov = obs_c.T @ src_c / obs.shape[0]
    u, svals, vt = np.linalg.svd(cov)
    if svals[0] <= 0 or svals[2] / svals[0] < 1e-9:
        raise DegenerateGeometryError("landmark point cloud is rank-deficient")

    d = np.sign(np.linalg.det(u @ vt))
    s_diag = np.diag([1.0, 1.0, d])
    rot = u @ s_diag @ vt

    if with_scale:
        var_src = (src_c ** 2).sum() / obs.shape[0]
        scale = float(np.trace(np.diag(svals) @ s_diag) / var_src)
    else:
        scale = 1.0
    trans = mu_obs - scale * rot @ mu_src

    fitted = scale * (rot @ src.T).T + trans
    residual = float(np.sqrt(np.mean(np.sum((obs - fitted) ** 2, axis=1))))

    pitch, yaw, roll = matrix_to_euler(rot)
    return PoseEstimate(pitch=pitch, yaw=yaw, roll=roll, residual=residual,
                        rotation=rot, scale=scale, translation=trans)


def estimate_pose_trace(lms: LandmarkSequence, canon: CanonicalFace | None = None) -> PoseTrace:
    """Per-frame head pose for a 3D landmark sequence."""
    if lms.dims != 3:
        raise ValueError("pose estimation needs 3D landmarks")
    canon = canon or CanonicalFace.default()
    angles = np.empty((len(lms), 3))
    residuals = np.empty(len(lms))
    for t in range(len(lms)):
        est = estimate_pose(lms.points[t], canon)
        angles[t] = (est.pitch, est.yaw, est.roll)
        residuals[t] = est.residual
    return PoseTrace(angles=angles, registration_residual=residuals)


def head_motion_score(trace: PoseTrace, axis: str = "yaw") -> float:
    """Head-motion degree of a clip: |max - min| of one pose axis.

    Yaw is the default axis since head movement is dominated by it. Meant
    for short clips (under ~20 s); a single frame scores 0.
    """
    if axis not in _AXIS_COLUMNS:
        raise ValueError(f"axis must be one of {sorted(_AXIS_COLUMNS)}, got {axis!r}")
    values = trace.axis(axis)
    return float(abs(values.max() - values.min()))


def eye_open_rate(
    landmarks: np.ndarray,
    left_idx=LEFT_EYE_IDX,
    right_idx=RIGHT_EYE_IDX,
) -> float:
    """Openness of the eyes in one frame: the eyelid-gap to eye-width ratio,
    averaged over both eyes.

    Per eye (corner indices at positions 0 and 3, upper lid at 1-2, lower
    lid at 4-5): rate = (||p1-p5|| + ||p2-p4||) / (2 * ||p0-p3||).
    """
    pts = np.asarray(landmarks, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < max(max(left_idx), max(right_idx)) + 1:
        raise ValueError(f"expected per-frame (68, D) landmarks, got {pts.shape}")

    def one_eye(idx):
        eye = pts[list(idx)]
        width = np.linalg.norm(eye[0] - eye[3])
        if width <= 0:
            raise DegenerateGeometryError("eye width is zero")
        gap = np.linalg.norm(eye[1] - eye[5]) + np.linalg.norm(eye[2] - eye[4])
        return gap / (2.0 * width)

    return float((one_eye(left_idx) + one_eye(right_idx)) / 2.0)


def eye_open_rates(lms: LandmarkSequence) -> np.ndarray:
    """eye_open_rate applied to every frame of a sequence."""
    return np.array([eye_open_rate(lms.points[t]) for t in range(len(lms))])
