"""Run configuration.

One structured document controls a whole run: preprocessing geometry,
binning, embedding providers, semantic-metric checkpoints, training
hyperparameters, metric toggles, parallelism, and the seed. Defaults match
the protocol constants the toolkit standardizes on (11-frame smoothing
window, crop ratios 10/9 and 8/9, square side 41/18 of the face length,
300-word lexicon).
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from ..blinkdata import BlinkSliceConfig
from ..errors import ConfigurationError
from ..geom import CropConfig, SmoothingConfig
from ..report import BinSpec

MODEL_CACHE_ENV = "THBENCH_MODEL_CACHE"

SEMANTIC_METRICS = ("lrsd", "esd", "bsd")
DEFAULT_METRICS = {
    "arcsim": True,
    "ssim": True,
    "psnr": True,
    "cpbd": True,
    "fid": True,
    "lrsd": False,
    "esd": False,
    "bsd": False,
}

#: which checkpoint each semantic metric requires
METRIC_CHECKPOINTS = {"lrsd": "lipreading", "esd": "emotion", "bsd": "blink"}


@dataclass
class TrainSettings:
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 1e-3
    frames: int = 8
    height: int = 32
    width: int = 32
    st_channels: tuple[int, ...] = (8, 16)
    refine_base_width: int = 8
    feature_dim: int = 32
    mlp_hidden: tuple[int, ...] = (32,)


@dataclass
class BenchConfig:
    seed: int = 0
    workers: int = 1
    output_dir: Path = Path("out")
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    crop: CropConfig = field(default_factory=CropConfig)
    pose_bins: BinSpec = field(default_factory=BinSpec.default_pose)
    motion_bins: BinSpec = field(default_factory=BinSpec.default_motion)
    blink: BlinkSliceConfig = field(default_factory=BlinkSliceConfig)
    identity_provider: dict = field(default_factory=lambda: {
        "name": "stub-identity", "modality": "face-identity", "model_source": "stub"})
    inception_provider: dict = field(default_factory=lambda: {
        "name": "stub-inception", "modality": "image-inception", "model_source": "stub"})
    checkpoints: dict = field(default_factory=lambda: {
        "lipreading": None, "emotion": None, "blink": None})
    metrics: dict = field(default_factory=lambda: dict(DEFAULT_METRICS))
    lexicon_size: int = 300
    train: TrainSettings = field(default_factory=TrainSettings)
    emit_trends: bool = True
    fid_trend_window: int = 15

    def enabled_metrics(self) -> list[str]:
        return sorted(name for name, on in self.metrics.items() if on)

    def checkpoint_path(self, target: str) -> Path | None:
        value = self.checkpoints.get(target)
        return None if value is None else resolve_model_path(value)

    def validate_for_eval(self) -> None:
        """Fail before any work if an enabled metric lacks its checkpoint."""
        unknown = set(self.metrics) - set(DEFAULT_METRICS)
        if unknown:
            raise ConfigurationError(f"unknown metric toggles: {sorted(unknown)}")
        for metric in SEMANTIC_METRICS:
            if not self.metrics.get(metric):
                continue
            target = METRIC_CHECKPOINTS[metric]
            path = self.checkpoint_path(target)
            if path is None:
                raise ConfigurationError(f"metric {metric!r} is enabled but no {target} checkpoint is configured")
            if not Path(path).exists():
                raise ConfigurationError(f"{target} checkpoint not found: {path}")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["output_dir"] = str(self.output_dir)
        data["pose_bins"] = {"axis": self.pose_bins.axis, "edges": list(self.pose_bins.edges)}
        data["motion_bins"] = {"axis": self.motion_bins.axis, "edges": list(self.motion_bins.edges)}
        data["checkpoints"] = {k: (None if v is None else str(v)) for k, v in self.checkpoints.items()}
        return data


def resolve_model_path(source) -> Path:
    """Model artifacts resolve as given if they exist, else against the
    cache directory named by the environment."""
    path = Path(source)
    if path.exists() or path.is_absolute():
        return path
    cache = os.environ.get(MODEL_CACHE_ENV)
    if cache:
        return Path(cache) / path
    return path


def load_config(path: Path | None = None) -> BenchConfig:
    """BenchConfig from a YAML document; omitted keys keep their defaults."""
    cfg = BenchConfig()
    if path is None:
        return cfg
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if "seed" in raw:
        cfg.seed = int(raw["seed"])
    if "workers" in raw:
        cfg.workers = int(raw["workers"])
    if "output_dir" in raw:
        cfg.output_dir = Path(raw["output_dir"])
    if "smoothing" in raw:
        cfg.smoothing = SmoothingConfig(**raw["smoothing"])
    if "crop" in raw:
        cfg.crop = CropConfig(**raw["crop"])
    if "pose_bins" in raw:
        cfg.pose_bins = BinSpec(axis=raw["pose_bins"].get("axis", "pose-yaw"),
                                edges=tuple(raw["pose_bins"]["edges"]))
    if "motion_bins" in raw:
        cfg.motion_bins = BinSpec(axis="motion", edges=tuple(raw["motion_bins"]["edges"]))
    if "blink" in raw:
        cfg.blink = BlinkSliceConfig(**raw["blink"])
    if "identity_provider" in raw:
        cfg.identity_provider = dict(raw["identity_provider"])
    if "inception_provider" in raw:
        cfg.inception_provider = dict(raw["inception_provider"])
    if "checkpoints" in raw:
        cfg.checkpoints.update(raw["checkpoints"])
    if "metrics" in raw:
        cfg.metrics.update({k: bool(v) for k, v in raw["metrics"].items()})
    if "lexicon_size" in raw:
        cfg.lexicon_size = int(raw["lexicon_size"])
    if "train" in raw:
        settings = raw["train"]
        if "st_channels" in settings:
            settings["st_channels"] = tuple(settings["st_channels"])
        if "mlp_hidden" in settings:
            settings["mlp_hidden"] = tuple(settings["mlp_hidden"])
        cfg.train = TrainSettings(**settings)
    if "emit_trends" in raw:
        cfg.emit_trends = bool(raw["emit_trends"])
    if "fid_trend_window" in raw:
        cfg.fid_trend_window = int(raw["fid_trend_window"])
    return cfg


def save_config(path: Path, cfg: BenchConfig) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
