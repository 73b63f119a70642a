"""Embedding providers and the identity-preservation metric.

A provider maps images to fixed-dimensional feature vectors behind a uniform
interface. Real deployments load a serialized TorchScript model; every test
path runs on the analytic stub providers, which are deterministic closed-form
signatures needing no weights. Identity preservation between a generated
frame and its ground-truth counterpart is the cosine similarity of their
embeddings, averaged over the clip.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateFeatureError, PairingError, ProviderFaultError, ProviderLoadError


@dataclass
class FeatureVector:
    """A fixed-length embedding with its Euclidean norm cached."""

    values: np.ndarray
    norm: float = field(init=False)
    source: str | None = None  # checkpoint/provider fingerprint, if any

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size < 1:
            raise ValueError("feature vector must have at least one entry")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature vector entries must be finite")
        self.norm = float(np.linalg.norm(self.values))

    def __len__(self) -> int:
        return self.values.size


def _as_float01(img: np.ndarray) -> np.ndarray:
    """Normalize an image buffer to float64 channels-last in [0, 1]."""
    arr = np.asarray(img)
    if np.issubdtype(arr.dtype, np.integer):
        arr = arr.astype(np.float64) / 255.0
    else:
        arr = arr.astype(np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected (H, W[, C]) image, got shape {arr.shape}")
    return arr


class EmbeddingProvider:
    """Interface: ``embed(img) -> FeatureVector`` with declared name,
    dimensionality and modality. Providers must be deterministic; a given
    (provider, image) pair always yields the same vector."""

    name: str
    dim: int
    modality: str  # "face-identity" or "image-inception"

    def embed(self, img: np.ndarray) -> FeatureVector:
        raise NotImplementedError

    def embed_batch(self, imgs) -> list[FeatureVector]:
        return [self.embed(im) for im in imgs]

    @property
    def fingerprint(self) -> str:
        return f"{self.name}:{self.dim}"


class StubIdentityProvider(EmbeddingProvider):
    """Analytic face-identity stand-in, d=4: per-channel means plus the
    global pixel standard deviation, all at unit (0..1) scale. A uniform
    gray image maps to [0.5, 0.5, 0.5, 0]."""

    name = "stub-identity"
    dim = 4
    modality = "face-identity"

    def embed(self, img: np.ndarray) -> FeatureVector:
        arr = _as_float01(img)
        if arr.shape[2] == 1:
            arr = np.repeat(arr, 3, axis=2)
        chans = arr[:, :, :3]
        sig = np.array([chans[:, :, 0].mean(), chans[:, :, 1].mean(),
                        chans[:, :, 2].mean(), chans.std()])
        return FeatureVector(values=sig, source=self.fingerprint)


class StubInceptionProvider(EmbeddingProvider):
    """Analytic image-feature stand-in for distribution-level metrics,
    d=8: mean and standard deviation of each cell of a 2x2 luma grid."""

    name = "stub-inception"
    dim = 8
    modality = "image-inception"

    def embed(self, img: np.ndarray) -> FeatureVector:
        arr = _as_float01(img).mean(axis=2)  # luma-ish collapse
        h2, w2 = arr.shape[0] // 2, arr.shape[1] // 2
        cells = [arr[:h2, :w2], arr[:h2, w2:], arr[h2:, :w2], arr[h2:, w2:]]
        sig = np.array([c.mean() for c in cells] + [c.std() for c in cells])
        return FeatureVector(values=sig, source=self.fingerprint)


class TorchScriptProvider(EmbeddingProvider):
    """Provider backed by a serialized TorchScript module.

    The module must map a (1, C, H, W) float tensor in [0, 1] to a (1, d)
    feature tensor. Input geometry is declared at load time and images are
    resized to it.
    """

    def __init__(self, name: str, model_source: str | Path, dim: int,
                 modality: str = "face-identity", input_size: tuple[int, int] = (112, 112)):
        import torch

        path = Path(model_source)
        if not path.exists():
            raise ProviderLoadError(f"model artifact not found: {path}")
        try:
            self._model = torch.jit.load(str(path), map_location="cpu")
            self._model.eval()
        except Exception as exc:  # corrupt archive, version mismatch, ...
            raise ProviderLoadError(f"cannot load model artifact {path}: {exc}") from exc
        self._torch = torch
        self.name = name
        self.dim = dim
        self.modality = modality
        self.input_size = input_size

    def embed(self, img: np.ndarray) -> FeatureVector:
        import cv2

        arr = _as_float01(img)
        if arr.shape[2] == 1:
            arr = np.repeat(arr, 3, axis=2)
        resized = cv2.resize(arr, (self.input_size[1], self.input_size[0]), interpolation=cv2.INTER_AREA)
        tensor = self._torch.from_numpy(resized.transpose(2, 0, 1)[None]).float()
        with self._torch.no_grad():
            out = self._model(tensor).numpy().reshape(-1)
        if out.shape[0] != self.dim:
            raise ProviderFaultError(f"provider {self.name} returned dim {out.shape[0]}, declared {self.dim}")
        if not np.all(np.isfinite(out)):
            raise ProviderFaultError(f"provider {self.name} produced non-finite output")
        return FeatureVector(values=out, source=self.fingerprint)


_STUBS = {
    "stub-identity": StubIdentityProvider,
    "stub-inception": StubInceptionProvider,
}


def load_provider(config: dict) -> EmbeddingProvider:
    """Build a provider from its configuration block: name, modality, dim,
    model_source ("stub" selects the analytic stub for the modality)."""
    source = config.get("model_source", "stub")
    if source == "stub":
        modality = config.get("modality", "face-identity")
        cls = StubIdentityProvider if modality == "face-identity" else StubInceptionProvider
        return cls()
    if config.get("name") in _STUBS:
        return _STUBS[config["name"]]()
    return TorchScriptProvider(
        name=config["name"],
        model_source=source,
        dim=int(config["dim"]),
        modality=config.get("modality", "face-identity"),
        input_size=tuple(config.get("input_size", (112, 112))),
    )


def embed_image(provider: EmbeddingProvider, img: np.ndarray) -> FeatureVector:
    """Embed one image; provider determinism makes this a pure function."""
    return provider.embed(img)


def arcsim(a: FeatureVector | np.ndarray, b: FeatureVector | np.ndarray) -> float:
    """Cosine similarity between two identity embeddings, in [-1, 1].

    Higher means the two faces carry the same identity; the sign convention
    is similarity (1 = same direction), not distance.
    """
    va = a.values if isinstance(a, FeatureVector) else np.asarray(a, dtype=np.float64).reshape(-1)
    vb = b.values if isinstance(b, FeatureVector) else np.asarray(b, dtype=np.float64).reshape(-1)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise DegenerateFeatureError("cannot take cosine of a zero-norm embedding")
    return float(np.dot(va, vb) / (na * nb))


def video_arcsim(real_frames, fake_frames, provider: EmbeddingProvider):
    """Identity similarity for a paired clip: per-frame cosine between the
    embeddings of corresponding frames, plus the arithmetic mean."""
    if len(real_frames) != len(fake_frames):
        raise PairingError(f"paired clips differ in length: {len(real_frames)} vs {len(fake_frames)}")
    scores = np.array([
        arcsim(provider.embed(r), provider.embed(f))
        for r, f in zip(real_frames, fake_frames)
    ])
    return scores, float(scores.mean())
