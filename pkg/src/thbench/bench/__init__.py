from .config import BenchConfig, load_config, save_config
from .manifest import DatasetManifest, ManifestEntry, load_manifest, save_manifest
from .pipeline import export_features, run_eval, run_preprocess, run_train

__all__ = [
    "BenchConfig",
    "load_config",
    "save_config",
    "DatasetManifest",
    "ManifestEntry",
    "load_manifest",
    "save_manifest",
    "export_features",
    "run_eval",
    "run_preprocess",
    "run_train",
]
