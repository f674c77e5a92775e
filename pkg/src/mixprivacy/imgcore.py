"""Image representation, seeded randomness, PNG I/O and shared raster primitives.

Images are plain ``numpy`` arrays of shape ``(H, W, C)`` with ``C`` in ``{1, 3}``
and ``float64`` intensities on the 0-255 scale.
"""
from __future__ import annotations

from pathlib import Path
from typing import Callable, Iterator

import numpy as np
from PIL import Image as PILImage
from scipy.ndimage import correlate1d

Image = np.ndarray

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class ImageError(ValueError):
    """Raised for invalid rasters or unsupported image files."""


def as_image(data, *, copy: bool = False) -> Image:
    """Validate ``data`` and return it as an ``(H, W, C)`` float64 image.

    2-D input is promoted to a single channel.
    """
    arr = np.array(data, dtype=np.float64, copy=copy) if copy else np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ImageError(f"expected (H, W, 1|3) raster, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ImageError("image must have at least one pixel")
    if not np.all(np.isfinite(arr)):
        raise ImageError("image contains non-finite intensities")
    return arr


def check_same_shape(*images: Image) -> None:
    shape = images[0].shape
    for img in images[1:]:
        if img.shape != shape:
            raise ImageError(f"dimension mismatch: {shape} vs {img.shape}")


def clamp(img: Image) -> Image:
    return np.clip(img, 0.0, 255.0)


def quantize(img: Image) -> Image:
    """Round half-to-even and clamp, i.e. the values an 8-bit PNG will hold."""
    return clamp(np.round(img))


# -- randomness ---------------------------------------------------------------

def make_rng(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return a generator that is reproducible for a given ``(seed, stream_id)``.

    PCG64 seeded through ``SeedSequence`` gives the same stream on every platform.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream_id)])))


def derive_seed(master_seed: int, *key: int) -> int:
    """Derive an independent 64-bit seed from ``master_seed`` and an integer key path."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# -- I/O ----------------------------------------------------------------------

def load_image(path, *, strip_alpha: bool = False) -> Image:
    """Load an 8-bit grayscale or RGB PNG.

    Alpha channels are rejected unless ``strip_alpha`` is set.
    """
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("LA", "RGBA"):
                if not strip_alpha:
                    raise ImageError(f"{path}: alpha channel not supported (mode {mode})")
                im = im.convert("L" if mode == "LA" else "RGB")
                mode = im.mode
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                if im.mode == "RGBA":
                    if not strip_alpha:
                        raise ImageError(f"{path}: alpha channel not supported")
                    im = im.convert("RGB")
                mode = im.mode
            if mode == "1":
                raise ImageError(f"{path}: unsupported bit depth (1-bit)")
            if mode not in ("L", "RGB"):
                raise ImageError(f"{path}: unsupported mode {mode}; expected 8-bit L or RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except ImageError:
        raise
    except (OSError, SyntaxError) as exc:
        raise ImageError(f"cannot read image {path}: {exc}") from exc
    return as_image(arr.astype(np.float64))


def save_image(img: Image, path) -> None:
    """Write ``img`` as an 8-bit PNG (rounded half-to-even, clamped to [0, 255])."""
    img = as_image(img)
    data = quantize(img).astype(np.uint8)
    if data.shape[2] == 1:
        pil = PILImage.fromarray(data[:, :, 0], mode="L")
    else:
        pil = PILImage.fromarray(data, mode="RGB")
    path = Path(path)
    try:
        pil.save(path, format="PNG")
    except OSError as exc:
        raise ImageError(f"cannot write image {path}: {exc}") from exc


# -- raster primitives --------------------------------------------------------

def to_grayscale(img: Image) -> Image:
    """BT.601 luma; single-channel input is returned unchanged."""
    img = as_image(img)
    if img.shape[2] == 1:
        return img
    return (img @ LUMA_WEIGHTS)[:, :, None]


def to_rgb(img: Image) -> Image:
    img = as_image(img)
    if img.shape[2] == 3:
        return img
    return np.repeat(img, 3, axis=2)


def _bilinear_axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres: out pixel o samples input coordinate (o + 0.5) * n_in / n_out - 0.5
    coord = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    coord = np.clip(coord, 0.0, n_in - 1)
    lo = np.floor(coord).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = coord - lo
    return lo, hi, frac


def resize_bilinear(img: Image, w: int, h: int) -> Image:
    """Bilinear resize to ``w`` x ``h`` using the half-pixel-centre convention.

    No antialiasing is applied when downscaling.
    """
    img = as_image(img)
    if w < 1 or h < 1:
        raise ImageError(f"target size must be positive, got {w}x{h}")
    H, W, _ = img.shape
    if (W, H) == (w, h):
        return img.copy()
    y0, y1, fy = _bilinear_axis(H, h)
    x0, x1, fx = _bilinear_axis(W, w)
    fy = fy[:, None, None]
    rows = img[y0] * (1.0 - fy) + img[y1] * fy
    fx = fx[None, :, None]
    return rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx


def sigma_for_ksize(ksize: int) -> float:
    """Gaussian sigma implied by a kernel width when only the width is given."""
    return 0.3 * ((ksize - 1) / 2 - 1) + 0.8


def gaussian_kernel(sigma: float, ksize: int) -> np.ndarray:
    if ksize < 1 or ksize % 2 == 0:
        raise ImageError(f"kernel size must be odd and >= 1, got {ksize}")
    if ksize == 1:
        return np.ones(1)
    if sigma <= 0:
        raise ImageError("sigma must be > 0 for kernel size > 1")
    t = np.arange(ksize) - (ksize - 1) / 2
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: Image, sigma: float, ksize: int) -> Image:
    """Separable Gaussian blur per channel with edge-replicated borders."""
    img = as_image(img)
    kernel = gaussian_kernel(sigma, ksize)
    if ksize == 1:
        return img.copy()
    out = correlate1d(img, kernel, axis=0, mode="nearest")
    return correlate1d(out, kernel, axis=1, mode="nearest")


def iter_tiles(height: int, width: int, b: int) -> Iterator[tuple[slice, slice]]:
    """Yield ``(rows, cols)`` slices of the b x b grid anchored at (0, 0).

    Tiles at the right and bottom edges are smaller when ``b`` does not divide the size.
    """
    if b < 1:
        raise ImageError(f"block edge must be >= 1, got {b}")
    for y in range(0, height, b):
        for x in range(0, width, b):
            yield slice(y, min(y + b, height)), slice(x, min(x + b, width))


def block_map(img: Image, b: int, f: Callable[[np.ndarray], np.ndarray]) -> Image:
    """Apply ``f`` independently to every tile of every channel.

    ``f`` receives a 2-D ``(h, w)`` array and must return an array of the same shape
    (or something broadcastable to it, e.g. a scalar).
    """
    img = as_image(img)
    out = np.empty_like(img)
    H, W, C = img.shape
    for rows, cols in iter_tiles(H, W, b):
        for c in range(C):
            tile = img[rows, cols, c]
            out[rows, cols, c] = f(tile)
    return out
