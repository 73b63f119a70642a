from .arcloss import ArcLossParams, ArcMarginHead, arc_margin_loss
from .model import STNet, STNetConfig, clips_to_tensor
from .train import (
    FeatureExport,
    LabeledClips,
    TrainRun,
    build_lexicon,
    extract_features,
    forward_clips,
    load_checkpoint,
    load_features,
    save_checkpoint,
    save_features,
    state_fingerprint,
    train_classifier,
)

__all__ = [
    "ArcLossParams",
    "ArcMarginHead",
    "arc_margin_loss",
    "STNet",
    "STNetConfig",
    "clips_to_tensor",
    "FeatureExport",
    "LabeledClips",
    "TrainRun",
    "build_lexicon",
    "extract_features",
    "forward_clips",
    "load_checkpoint",
    "load_features",
    "save_checkpoint",
    "save_features",
    "state_fingerprint",
    "train_classifier",
]
