"""Image-level visual-quality metrics.

SSIM and PSNR are full-reference scores over aligned frame pairs; CPBD is a
no-reference sharpness score built on a just-noticeable-blur probability
model; the Frechet distance compares Gaussian fits of deep-feature
distributions (the set-level quality statistic). All functions are pure and
operate on numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.feature import canny

from .errors import InsufficientSamplesError

# Rec.601 luma weights for color -> grayscale conversion
_LUMA = np.array([0.299, 0.587, 0.114])


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Collapse an (H, W[, C]) image to float64 luma, preserving scale."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 1:
        return arr[:, :, 0]
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr @ _LUMA
    raise ValueError(f"expected (H, W) or (H, W, 1|3) image, got {arr.shape}")


def _gaussian_kernel2d(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    window_size: int = 11,
    sigma: float = 1.5,
    peak: float = 255.0,
    k1: float = 0.01,
    k2: float = 0.03,
) -> float:
    """Mean local structural similarity between two grayscale images.

    Local means, variances, and covariance are taken under a Gaussian window
    and combined into the usual luminance/contrast/structure product. The
    window must fit inside the image; boundary windows are excluded rather
    than padded. Symmetric in (a, b); identical inputs score exactly 1.
    """
    ga = to_grayscale(a)
    gb = to_grayscale(b)
    if ga.shape != gb.shape:
        raise ValueError(f"image shapes differ: {ga.shape} vs {gb.shape}")
    if min(ga.shape) < window_size:
        raise ValueError(f"image smaller than the {window_size}px window")

    kernel = _gaussian_kernel2d(window_size, sigma)
    half = window_size // 2
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2

    def local(img):
        return ndimage.correlate(img, kernel, mode="constant")[half:-half, half:-half]

    mu_a = local(ga)
    mu_b = local(gb)
    var_a = local(ga * ga) - mu_a * mu_a
    var_b = local(gb * gb) - mu_b * mu_b
    cov = local(ga * gb) - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images return +inf."""
    arr_a = np.asarray(a, dtype=np.float64)
    arr_b = np.asarray(b, dtype=np.float64)
    if arr_a.shape != arr_b.shape:
        raise ValueError(f"image shapes differ: {arr_a.shape} vs {arr_b.shape}")
    mse = float(np.mean((arr_a - arr_b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


# ------------------------------------------------------------------ CPBD

#: probability that blur is detected at exactly the just-noticeable width
PROB_JNB = 1.0 - math.exp(-1.0)


@dataclass(frozen=True)
class CpbdParams:
    """Knobs of the cumulative blur-detection score. Defaults follow the
    published method: 64px blocks, beta 3.6, a block is processed when more
    than 0.2% of its pixels are edges, and the just-noticeable width is 5px
    for low-contrast blocks (<= 50 gray levels) and 3px otherwise."""

    block_size: int = 64
    beta: float = 3.6
    edge_block_fraction: float = 0.002
    low_contrast_cutoff: float = 50.0
    width_jnb_low: float = 5.0
    width_jnb_high: float = 3.0
    canny_sigma: float = 1.0
    canny_low: float = 0.05
    canny_high: float = 0.1


@dataclass
class CpbdResult:
    score: float
    no_edges: bool
    edge_pixel_count: int

    def __float__(self) -> float:
        return self.score


def _sobel_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    kx = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
    gx = ndimage.correlate(img, kx, mode="nearest")
    gy = ndimage.correlate(img, kx.T, mode="nearest")
    return gx, gy


def marziliano_edge_widths(img: np.ndarray, edge_mask: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Edge width map for horizontally-differentiated (vertical) edges.

    For every edge pixel whose gradient direction rounds to horizontal, the
    intensity profile is traced along the row to the nearest local extremum
    on each side; the width is the pixel distance between the two extrema.
    Pixels without a measured width hold 0.
    """
    h, w = img.shape
    angles = np.rad2deg(np.arctan2(gy, gx))
    rounded = (np.round(angles / 45.0) * 45.0) % 360.0
    horizontal = edge_mask & ((rounded == 0.0) | (rounded == 180.0))

    widths = np.zeros((h, w))
    rows, cols = np.nonzero(horizontal)
    for r, c in zip(rows, cols):
        row = img[r]
        if rounded[r, c] == 0.0:  # intensity rising left -> right
            left = c
            while left > 0 and row[left - 1] < row[left]:
                left -= 1
            right = c
            while right < w - 1 and row[right + 1] > row[right]:
                right += 1
        else:  # falling edge
            left = c
            while left > 0 and row[left - 1] > row[left]:
                left -= 1
            right = c
            while right < w - 1 and row[right + 1] < row[right]:
                right += 1
        widths[r, c] = right - left
    return widths


def cpbd(img: np.ndarray, params: CpbdParams = CpbdParams()) -> CpbdResult:
    """Cumulative probability of blur detection; higher means sharper.

    Edge pixels are found per 64px block (blocks with too few edges are
    skipped), each edge gets a width via marziliano_edge_widths, the width
    is turned into a blur-detection probability against the block's
    contrast-dependent just-noticeable width, and the score is the fraction
    of edges whose probability stays below the just-noticeable level.

    An image with no measurable edges scores 0.0 and sets ``no_edges`` so
    reports can exclude it instead of reading it as maximal blur.
    """
    gray = to_grayscale(img)
    if min(gray.shape) < params.block_size:
        raise ValueError(f"image smaller than one {params.block_size}px block")

    edge_map = canny(gray / 255.0, sigma=params.canny_sigma,
                     low_threshold=params.canny_low, high_threshold=params.canny_high)
    gx, gy = _sobel_gradients(gray)
    widths = marziliano_edge_widths(gray, edge_map, gx, gy)

    block = params.block_size
    min_edges = params.edge_block_fraction * block * block
    h, w = gray.shape

    below_jnb = 0
    total = 0
    for bi in range(h // block):
        for bj in range(w // block):
            ys = slice(bi * block, (bi + 1) * block)
            xs = slice(bj * block, (bj + 1) * block)
            if edge_map[ys, xs].sum() <= min_edges:
                continue
            contrast = float(gray[ys, xs].max() - gray[ys, xs].min())
            width_jnb = params.width_jnb_low if contrast <= params.low_contrast_cutoff else params.width_jnb_high
            block_widths = widths[ys, xs]
            measured = block_widths[block_widths > 0]
            for width in measured:
                prob_blur = 1.0 - math.exp(-((width / width_jnb) ** params.beta))
                if prob_blur <= PROB_JNB + 1e-12:
                    below_jnb += 1
                total += 1

    if total == 0:
        return CpbdResult(score=0.0, no_edges=True, edge_pixel_count=0)
    return CpbdResult(score=below_jnb / total, no_edges=False, edge_pixel_count=total)


# --------------------------------------------------------- Frechet distance


@dataclass
class GaussianStats:
    """First and second moments of a feature sample."""

    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        d = self.mean.shape[0]
        if self.covariance.shape != (d, d):
            raise ValueError(f"covariance must be ({d}, {d}), got {self.covariance.shape}")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased sample covariance of an (n, d) matrix."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError(f"expected (n, d) feature matrix, got {feats.shape}")
    n = feats.shape[0]
    if n < 2:
        raise InsufficientSamplesError(f"need at least 2 samples for a covariance, got {n}")
    mean = feats.mean(axis=0)
    centered = feats - mean
    cov = centered.T @ centered / (n - 1)
    return GaussianStats(mean=mean, covariance=cov, sample_count=n)


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix; tiny negative eigenvalues from
    roundoff are clamped to zero."""
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(p: GaussianStats, q: GaussianStats) -> float:
    """Squared Wasserstein-2 distance between two Gaussian fits:

        ||mu_p - mu_q||^2 + Tr(S_p + S_q - 2 (S_p S_q)^(1/2))

    The cross term is evaluated through the symmetrized product
    S_p^(1/2) S_q S_p^(1/2), which is PSD by construction, so the matrix
    root reduces to an eigendecomposition. The result is clamped at 0.
    """
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    for stats in (p, q):
        if not (np.all(np.isfinite(stats.mean)) and np.all(np.isfinite(stats.covariance))):
            raise ValueError("non-finite Gaussian statistics")

    diff = p.mean - q.mean
    sqrt_p = _sym_sqrt(p.covariance)
    inner = sqrt_p @ q.covariance @ sqrt_p
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    trace_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()

    value = float(diff @ diff + np.trace(p.covariance) + np.trace(q.covariance) - 2.0 * trace_sqrt)
    return max(value, 0.0)


def frechet_from_features(real: np.ndarray, generated: np.ndarray) -> float:
    """Frechet distance straight from two (n, d) feature matrices."""
    return frechet_distance(gaussian_stats(real), gaussian_stats(generated))


def windowed_frechet_trace(
    real_features: np.ndarray,
    fake_features: np.ndarray,
    window: int = 15,
) -> np.ndarray:
    """Per-frame Frechet-distance proxy over a sliding temporal window.

    The true distance is a set-level statistic; this windowed variant exists
    only for per-frame trend traces and is labeled as a proxy wherever it is
    reported. Frames too close to the clip ends reuse the nearest full
    window.
    """
    real = np.asarray(real_features, dtype=np.float64)
    fake = np.asarray(fake_features, dtype=np.float64)
    if real.shape != fake.shape:
        raise ValueError("paired feature matrices must have equal shapes")
    t = real.shape[0]
    if t < 2:
        raise InsufficientSamplesError("need at least 2 frames for a windowed trace")
    window = max(2, min(window, t))
    half = window // 2
    out = np.empty(t)
    for i in range(t):
        start = min(max(i - half, 0), t - window)
        sl = slice(start, start + window)
        out[i] = frechet_from_features(real[sl], fake[sl])
    return out


@dataclass
class QualityScores:
    """Per-comparison visual-quality record. ``fid`` is a set-level value
    copied onto each member of the set; ``cpbd_no_edges`` marks sharpness
    scores that came from edge-free frames."""

    ssim: float
    psnr: float
    cpbd: float
    fid: float | None = None
    cpbd_no_edges: bool = False

    def __post_init__(self):
        if not -1.0 <= self.ssim <= 1.0:
            raise ValueError(f"ssim out of range: {self.ssim}")
        if not 0.0 <= self.cpbd <= 1.0:
            raise ValueError(f"cpbd out of range: {self.cpbd}")
        if self.fid is not None and self.fid < -1e-6:
            raise ValueError(f"fid must be non-negative, got {self.fid}")
        if self.fid is not None:
            self.fid = max(self.fid, 0.0)
