"""Full-reference privacy scores.

Every score is a dissimilarity: 0 for identical inputs, larger means the
obfuscated image is harder to recognise.
"""
from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.fft import dctn
from scipy.ndimage import correlate1d
from scipy.signal import convolve2d

from .imgcore import Image, as_image, check_same_shape, resize_bilinear, to_grayscale


class Metric(str, Enum):
    MSE = "mse"
    DSSIM = "dssim"
    PHASH = "phash"
    DHAAR = "dhaar"
    FID = "fid"

    @classmethod
    def parse(cls, value) -> "Metric":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown metric id {value!r}; expected one of {[m.value for m in cls]}") from None


BOUNDED = {Metric.DSSIM, Metric.PHASH, Metric.DHAAR}

# SSIM constants (Wang et al. defaults)
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 255.0

# HaarPSI constants
HAAR_C = 30.0
HAAR_ALPHA = 4.2

EIG_CLIP = 1e-10


def mse(a: Image, b: Image) -> float:
    a, b = as_image(a), as_image(b)
    check_same_shape(a, b)
    return float(np.mean((a - b) ** 2))


# -- SSIM ---------------------------------------------------------------------

def _ssim_window() -> np.ndarray:
    t = np.arange(SSIM_WIN) - (SSIM_WIN - 1) / 2
    g = np.exp(-(t * t) / (2 * SSIM_SIGMA**2))
    return g / g.sum()


def _valid_filter(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = correlate1d(correlate1d(x, g, axis=0, mode="nearest"), g, axis=1, mode="nearest")
    return out[r:-r, r:-r]


def ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    """Mean SSIM of two 2-D arrays over all fully-contained window positions."""
    g = _ssim_window()
    c1 = (SSIM_K1 * DATA_RANGE) ** 2
    c2 = (SSIM_K2 * DATA_RANGE) ** 2
    mu_x, mu_y = _valid_filter(x, g), _valid_filter(y, g)
    sxx = _valid_filter(x * x, g) - mu_x * mu_x
    syy = _valid_filter(y * y, g) - mu_y * mu_y
    sxy = _valid_filter(x * y, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a: Image, b: Image, *, color: str = "channels") -> float:
    """SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, L=255.

    Colour images are scored per channel and averaged (``color="channels"``) or on
    BT.601 luma (``color="luma"``).
    """
    a, b = as_image(a), as_image(b)
    check_same_shape(a, b)
    if min(a.shape[:2]) < SSIM_WIN:
        raise ValueError(f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}, got {a.shape[1]}x{a.shape[0]}")
    if color == "luma":
        a, b = to_grayscale(a), to_grayscale(b)
    elif color != "channels":
        raise ValueError(f"color must be 'channels' or 'luma', got {color!r}")
    return float(np.mean([ssim_channel(a[:, :, c], b[:, :, c]) for c in range(a.shape[2])]))


def dssim(a: Image, b: Image, *, color: str = "channels") -> float:
    """``1 - SSIM`` with SSIM clamped to [0, 1]."""
    return 1.0 - min(max(ssim(a, b, color=color), 0.0), 1.0)


# -- pHash --------------------------------------------------------------------

def phash_bits(img: Image) -> np.ndarray:
    """64-bit DCT perceptual hash as a flat boolean array (row-major 8x8)."""
    gray = resize_bilinear(to_grayscale(img), 32, 32)[:, :, 0]
    coeffs = dctn(gray, type=2, norm="ortho")[:8, :8]
    flat = coeffs.ravel()
    threshold = flat[1:].mean()  # DC term excluded
    return flat > threshold


def phash_distance(a: Image, b: Image) -> float:
    """Normalised Hamming distance between the two 64-bit hashes."""
    return float(np.count_nonzero(phash_bits(a) != phash_bits(b)) / 64.0)


# -- HaarPSI ------------------------------------------------------------------

def _conv2_same(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    # MATLAB conv2(x, k, 'same'): centre part of the full convolution, zero padded
    full = convolve2d(x, k, mode="full")
    r0, c0 = k.shape[0] // 2, k.shape[1] // 2
    return full[r0:r0 + x.shape[0], c0:c0 + x.shape[1]]


def _subsample(x: np.ndarray) -> np.ndarray:
    return _conv2_same(x, np.full((2, 2), 0.25))[::2, ::2]


def _haar_decompose(x: np.ndarray, scales: int = 3) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per scale, the (horizontal-edge, vertical-edge) Haar responses."""
    out = []
    for s in range(1, scales + 1):
        size = 2**s
        f = np.full((size, size), 2.0**-s)
        f[: size // 2] *= -1
        out.append((_conv2_same(x, f), _conv2_same(x, f.T)))
    return out


def _sigmoid(x, alpha):
    return 1.0 / (1.0 + np.exp(-alpha * x))


def _logit(x, alpha):
    return np.log(x / (1.0 - x)) / alpha


def _similarity(a, b, c):
    return (2 * a * b + c) / (a * a + b * b + c)


def haarpsi(a: Image, b: Image) -> float:
    """Haar wavelet-based perceptual similarity index in [0, 1].

    Follows the authors' reference construction: 2x2 mean subsampling, three
    Haar scales in two orientations, scale-3 magnitudes as weights, and YIQ
    chroma similarity for colour images.
    """
    a, b = as_image(a), as_image(b)
    check_same_shape(a, b)
    if min(a.shape[:2]) < 8:
        raise ValueError(f"HaarPSI needs images of at least 8x8, got {a.shape[1]}x{a.shape[0]}")
    color = a.shape[2] == 3
    if color:
        yiq = np.array([[0.299, 0.587, 0.114], [0.596, -0.274, -0.322], [0.211, -0.523, 0.312]])
        a, b = a @ yiq.T, b @ yiq.T
    a = np.stack([_subsample(a[:, :, c]) for c in range(a.shape[2])], axis=2)
    b = np.stack([_subsample(b[:, :, c]) for c in range(b.shape[2])], axis=2)

    ca, cb = _haar_decompose(a[:, :, 0]), _haar_decompose(b[:, :, 0])
    sims, weights = [], []
    for o in range(2):
        weights.append(np.maximum(np.abs(ca[2][o]), np.abs(cb[2][o])))
        s1 = _similarity(np.abs(ca[0][o]), np.abs(cb[0][o]), HAAR_C)
        s2 = _similarity(np.abs(ca[1][o]), np.abs(cb[1][o]), HAAR_C)
        sims.append((s1 + s2) / 2)
    if color:
        box = np.full((2, 2), 0.25)
        chroma = []
        for c in (1, 2):
            ia = np.abs(_conv2_same(a[:, :, c], box))
            ib = np.abs(_conv2_same(b[:, :, c], box))
            chroma.append(_similarity(ia, ib, HAAR_C))
        sims.append((chroma[0] + chroma[1]) / 2)
        weights.append((weights[0] + weights[1]) / 2)

    sims_arr, w = np.stack(sims), np.stack(weights)
    total = w.sum()
    if total > 0:
        pooled = float(np.sum(_sigmoid(sims_arr, HAAR_ALPHA) * w) / total)
    else:
        pooled = float(np.mean(_sigmoid(sims_arr, HAAR_ALPHA)))
    value = float(_logit(pooled, HAAR_ALPHA) ** 2)
    return min(max(value, 0.0), 1.0)


def dhaar(a: Image, b: Image) -> float:
    return 1.0 - haarpsi(a, b)


# -- Frechet distance ---------------------------------------------------------

def as_features(vectors) -> np.ndarray:
    f = np.asarray(vectors, dtype=np.float64)
    if f.ndim == 1:
        f = f[None, :]
    if f.ndim != 2 or f.shape[0] == 0 or f.shape[1] == 0:
        raise ValueError(f"feature set must be a non-empty (n, d) array, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("feature set contains non-finite values")
    return f


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    vals = np.where(vals > EIG_CLIP, vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _stats(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = f.mean(axis=0)
    if f.shape[0] == 1:
        return mu, np.zeros((f.shape[1], f.shape[1]))
    return mu, np.atleast_2d(np.cov(f, rowvar=False))


def frechet_distance(f1, f2) -> float:
    """Frechet distance between Gaussians fitted to two feature sets.

    ``Tr((S1 S2)^1/2)`` is evaluated as ``Tr((S1^1/2 S2 S1^1/2)^1/2)``, which is
    symmetric PSD, so only symmetric eigendecompositions are needed. A set with
    a single vector has zero covariance.
    """
    f1, f2 = as_features(f1), as_features(f2)
    if f1.shape[1] != f2.shape[1]:
        raise ValueError(f"feature dimension mismatch: {f1.shape[1]} vs {f2.shape[1]}")
    mu1, s1 = _stats(f1)
    mu2, s2 = _stats(f2)
    r1 = _psd_sqrt(s1)
    inner = r1 @ s2 @ r1
    vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_sqrt = float(np.sum(np.sqrt(np.where(vals > EIG_CLIP, vals, 0.0))))
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * tr_sqrt)
    return max(value, 0.0)


def load_features(path) -> np.ndarray:
    """Read a feature file: a ``dim=<d>`` header, then one vector per line."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith("dim="):
        raise ValueError(f"{path}: missing 'dim=<d>' header")
    try:
        dim = int(lines[0][4:])
    except ValueError:
        raise ValueError(f"{path}: bad header {lines[0]!r}") from None
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        try:
            row = [float(t) for t in ln.split()]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric value") from None
        if len(row) != dim:
            raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(row)}")
        rows.append(row)
    return as_features(rows)


def save_features(vectors, path) -> None:
    f = as_features(vectors)
    body = "\n".join(" ".join(repr(float(v)) for v in row) for row in f)
    Path(path).write_text(f"dim={f.shape[1]}\n{body}\n")


# -- dispatch -----------------------------------------------------------------

_IMAGE_METRICS = {
    Metric.MSE: mse,
    Metric.DSSIM: dssim,
    Metric.PHASH: phash_distance,
    Metric.DHAAR: dhaar,
}


def score(a: Image, b: Image, metric) -> float:
    m = Metric.parse(metric)
    if m is Metric.FID:
        raise ValueError("FID compares feature sets; use frechet_distance")
    return _IMAGE_METRICS[m](a, b)


def score_sample(sample, sources: Sequence[Image], metric) -> float:
    """Privacy of an obfuscated sample: its score against its most similar source."""
    if len(sources) == 0:
        raise ValueError("score_sample needs at least one source image")
    image = sample.image if hasattr(sample, "image") else sample
    return min(score(image, src, metric) for src in sources)
