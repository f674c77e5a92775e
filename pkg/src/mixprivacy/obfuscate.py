"""Mixup-based obfuscation operators and their label rules.

Every operator returns an :class:`ObfuscatedSample` whose public part is the
image and one class label; mixing weights and seeds live in the private part.
The public label is decided before any scheme randomness is drawn, so a
scheme whose distortion parameter is at its identity value consumes the
generator exactly like :func:`mix`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .imgcore import Image, as_image, check_same_shape, clamp, gaussian_blur, sigma_for_ksize

Source = tuple  # (Image, int class id)

WEIGHT_TOL = 1e-9
TIE_TOL = 1e-12


class Scheme(str, Enum):
    MIX = "mix"
    GRAFT = "graft-mix"
    SHUFFLE = "shuffle-mix"
    NOISE = "noise-mix"
    PIXELIZE = "pixelize-mix"
    BLUR = "blur-mix"


def mix_weights(weights: Sequence[float]) -> tuple[float, ...]:
    """Validate a weight vector: at least two entries in [0, 1] summing to 1."""
    w = tuple(float(x) for x in weights)
    if len(w) < 2:
        raise ValueError(f"need at least two mixing weights, got {len(w)}")
    if any(not (0.0 <= x <= 1.0) for x in w):
        raise ValueError(f"mixing weights must lie in [0, 1]: {w}")
    if abs(sum(w) - 1.0) > WEIGHT_TOL:
        raise ValueError(f"mixing weights must sum to 1, got {sum(w)!r}")
    return w


def pair_weights(lam: float) -> tuple[float, float]:
    return mix_weights((lam, 1.0 - lam))  # type: ignore[return-value]


@dataclass(frozen=True)
class ObfuscationParams:
    """Scheme selector plus the scheme's parameters.

    ``b`` is the tile edge for both shuffle-mix and pixelize-mix. For blur-mix,
    give ``blur_sigma``, ``ksize`` or both; a missing value is derived from the
    other one.
    """

    scheme: Scheme
    weights: tuple[float, ...] = (0.5, 0.5)
    p: float | None = None
    b: int | None = None
    sigma: float | None = None
    blur_sigma: float | None = None
    ksize: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "weights", mix_weights(self.weights))
        s = self.scheme
        if s is not Scheme.MIX and len(self.weights) != 2:
            raise ValueError(f"{s.value} mixes exactly two images")
        if s is Scheme.GRAFT and (self.p is None or not 0.0 <= self.p <= 1.0):
            raise ValueError("graft-mix needs p in [0, 1]")
        if s in (Scheme.SHUFFLE, Scheme.PIXELIZE) and (self.b is None or int(self.b) != self.b or self.b < 1):
            raise ValueError(f"{s.value} needs an integer block edge b >= 1")
        if s is Scheme.NOISE and (self.sigma is None or self.sigma < 0):
            raise ValueError("noise-mix needs sigma >= 0")
        if s is Scheme.BLUR:
            if self.blur_sigma is None and self.ksize is None:
                raise ValueError("blur-mix needs blur_sigma or ksize")
            if self.ksize is not None and (self.ksize < 1 or self.ksize % 2 == 0):
                raise ValueError(f"ksize must be odd and >= 1, got {self.ksize}")
            if self.blur_sigma is not None and self.blur_sigma < 0:
                raise ValueError("blur_sigma must be >= 0")

    @property
    def blur(self) -> tuple[float, int]:
        """Resolved ``(sigma, ksize)`` for blur-mix."""
        ksize, sigma = self.ksize, self.blur_sigma
        if ksize is None:
            ksize = 2 * math.ceil(3 * sigma) + 1 if sigma > 0 else 1
        if sigma is None:
            sigma = sigma_for_ksize(ksize) if ksize > 1 else 0.0
        return float(sigma), int(ksize)

    def describe(self) -> str:
        """Compact ``key=value;...`` rendering of the scheme parameters (no weights)."""
        parts = []
        for name in ("p", "b", "sigma", "blur_sigma", "ksize"):
            value = getattr(self, name)
            if value is not None:
                parts.append(f"{name}={value!r}")
        return ";".join(parts)


@dataclass(frozen=True)
class Provenance:
    """Client-side record of how a sample was made. Never released."""

    weights: tuple[float, ...]
    source_ids: tuple[str, ...] = ()
    seed: int | None = None
    scheme: str = Scheme.MIX.value
    params: str = ""


@dataclass(frozen=True)
class ObfuscatedSample:
    image: Image
    label: int
    private: Provenance = field(repr=False)

    @property
    def public(self) -> tuple[Image, int]:
        return self.image, self.label


def _pick_label(labels: Sequence[int], contributions: Sequence[float], rng: np.random.Generator) -> int:
    c = np.asarray(contributions, dtype=np.float64)
    tied = np.flatnonzero(c >= c.max() - TIE_TOL)
    if len(tied) == 1:
        return int(labels[tied[0]])
    return int(labels[tied[rng.integers(len(tied))]])


def _combine(images: Sequence[Image], weights: Sequence[float]) -> Image:
    out = weights[0] * images[0]
    for w, img in zip(weights[1:], images[1:]):
        out = out + w * img
    return out


def _unpack(sources: Sequence[Source]) -> tuple[list[Image], list[int]]:
    images = [as_image(img) for img, _ in sources]
    labels = [int(lbl) for _, lbl in sources]
    check_same_shape(*images)
    return images, labels


def _sample(image: Image, label: int, weights, scheme: Scheme, params: str = "") -> ObfuscatedSample:
    return ObfuscatedSample(image, label, Provenance(weights=tuple(weights), scheme=scheme.value, params=params))


def mix(sources: Sequence[Source], weights: Sequence[float], rng: np.random.Generator) -> ObfuscatedSample:
    """Pixelwise convex combination of ``sources``.

    The label is that of the largest weight; exact ties are broken by a uniform
    draw from ``rng``.
    """
    weights = mix_weights(weights)
    if len(sources) != len(weights):
        raise ValueError(f"{len(sources)} sources but {len(weights)} weights")
    images, labels = _unpack(sources)
    label = _pick_label(labels, weights, rng)
    return _sample(_combine(images, weights), label, weights, Scheme.MIX)


def graft_mix(xi: Source, xj: Source, p: float, weights: Sequence[float], rng: np.random.Generator) -> ObfuscatedSample:
    """Keep a random fraction ``p`` of ``xi``'s pixels and mix the rest.

    The graft mask selects exactly ``round(p * W * H)`` pixel positions and is
    shared across channels. ``xi`` wins the label when its effective share
    ``p + (1 - p) * lam`` is the larger one.
    """
    lam, lam_j = mix_weights(weights)
    if len(weights) != 2:
        raise ValueError("graft-mix takes two weights")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    (img_i, img_j), labels = _unpack([xi, xj])
    label = _pick_label(labels, (p + (1.0 - p) * lam, (1.0 - p) * lam_j), rng)
    out = _combine([img_i, img_j], (lam, lam_j))
    H, W, _ = img_i.shape
    count = round(p * W * H)
    if count > 0:
        mask = np.zeros(H * W, dtype=bool)
        mask[rng.choice(H * W, size=count, replace=False)] = True
        out = np.where(mask.reshape(H, W, 1), img_i, out)
    return _sample(out, label, (lam, lam_j), Scheme.GRAFT, f"p={p!r}")


def block_shuffle(img: Image, b: int, rng: np.random.Generator) -> Image:
    """Permute pixels inside each b x b tile with a fresh random permutation per tile.

    All channels of a pixel move together. ``b == 1`` draws nothing from ``rng``.
    """
    img = as_image(img)
    if b < 1:
        raise ValueError(f"block edge must be >= 1, got {b}")
    if b == 1:
        return img.copy()
    H, W, C = img.shape
    ys, xs = np.divmod(np.arange(H * W), W)
    tile = (ys // b) * (-(-W // b)) + xs // b
    keys = rng.random(H * W)
    # positions grouped by tile in raster order, and the same groups in random key order
    by_position = np.lexsort((np.arange(H * W), tile))
    by_key = np.lexsort((keys, tile))
    flat = img.reshape(H * W, C)
    out = np.empty_like(flat)
    out[by_position] = flat[by_key]
    return out.reshape(H, W, C)


def shuffle_mix(xi: Source, xj: Source, b: int, weights: Sequence[float], rng: np.random.Generator) -> ObfuscatedSample:
    weights = mix_weights(weights)
    (img_i, img_j), labels = _unpack([xi, xj])
    label = _pick_label(labels, weights, rng)
    out = _combine([block_shuffle(img_i, b, rng), block_shuffle(img_j, b, rng)], weights)
    return _sample(out, label, weights, Scheme.SHUFFLE, f"b={b!r}")


def noise_mix(xi: Source, xj: Source, sigma: float, weights: Sequence[float], rng: np.random.Generator) -> ObfuscatedSample:
    """Add independent N(0, sigma^2) noise to each source, mix, then clamp to [0, 255]."""
    weights = mix_weights(weights)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    (img_i, img_j), labels = _unpack([xi, xj])
    label = _pick_label(labels, weights, rng)
    if sigma > 0:
        img_i = img_i + rng.normal(0.0, sigma, img_i.shape)
        img_j = img_j + rng.normal(0.0, sigma, img_j.shape)
    out = clamp(_combine([img_i, img_j], weights))
    return _sample(out, label, weights, Scheme.NOISE, f"sigma={sigma!r}")


def pixelize(img: Image, s: int) -> Image:
    """Replace every s x s tile (smaller at the edges) by its per-channel mean."""
    img = as_image(img)
    if s < 1:
        raise ValueError(f"square edge must be >= 1, got {s}")
    if s == 1:
        return img.copy()
    H, W, _ = img.shape
    ys, xs = np.arange(0, H, s), np.arange(0, W, s)
    sums = np.add.reduceat(np.add.reduceat(img, ys, axis=0), xs, axis=1)
    hs = np.diff(np.append(ys, H))
    ws = np.diff(np.append(xs, W))
    means = sums / (hs[:, None, None] * ws[None, :, None])
    return np.repeat(np.repeat(means, hs, axis=0), ws, axis=1)


def pixelize_mix(xi: Source, xj: Source, s: int, weights: Sequence[float], rng: np.random.Generator | None = None) -> ObfuscatedSample:
    """Pixelize both sources, then mix.

    ``rng`` is only consulted to break an exact weight tie.
    """
    weights = mix_weights(weights)
    (img_i, img_j), labels = _unpack([xi, xj])
    label = _pick_label(labels, weights, rng if rng is not None else np.random.default_rng(0))
    out = _combine([pixelize(img_i, s), pixelize(img_j, s)], weights)
    return _sample(out, label, weights, Scheme.PIXELIZE, f"b={s!r}")


def blur_mix(xi: Source, xj: Source, blur: tuple[float, int], weights: Sequence[float], rng: np.random.Generator | None = None) -> ObfuscatedSample:
    """Gaussian-blur both sources with ``blur = (sigma, ksize)``, then mix."""
    weights = mix_weights(weights)
    sigma, ksize = blur
    (img_i, img_j), labels = _unpack([xi, xj])
    label = _pick_label(labels, weights, rng if rng is not None else np.random.default_rng(0))
    out = _combine([gaussian_blur(img_i, sigma, ksize), gaussian_blur(img_j, sigma, ksize)], weights)
    return _sample(out, label, weights, Scheme.BLUR, f"blur_sigma={sigma!r};ksize={ksize!r}")


def apply(params: ObfuscationParams, sources: Sequence[Source], rng: np.random.Generator) -> ObfuscatedSample:
    """Run the operator selected by ``params`` on ``sources``."""
    s, w = params.scheme, params.weights
    if s is Scheme.MIX:
        sample = mix(sources, w, rng)
    else:
        if len(sources) != 2:
            raise ValueError(f"{s.value} mixes exactly two images, got {len(sources)}")
        xi, xj = sources
        if s is Scheme.GRAFT:
            sample = graft_mix(xi, xj, params.p, w, rng)
        elif s is Scheme.SHUFFLE:
            sample = shuffle_mix(xi, xj, int(params.b), w, rng)
        elif s is Scheme.NOISE:
            sample = noise_mix(xi, xj, params.sigma, w, rng)
        elif s is Scheme.PIXELIZE:
            sample = pixelize_mix(xi, xj, int(params.b), w, rng)
        else:
            sample = blur_mix(xi, xj, params.blur, w, rng)
    prov = Provenance(weights=w, scheme=s.value, params=params.describe())
    return ObfuscatedSample(sample.image, sample.label, prov)


def choose_lambda(xi: Image, xj: Image, metric="dssim", grid: Sequence[float] = (0.5, 0.6, 0.7, 0.75)) -> float:
    """Pick the grid weight whose mixture is least recognisable as either source.

    Maximises ``min(score(mix, xi), score(mix, xj))``; ties go to the smallest
    weight.
    """
    from .metrics import score

    if not grid:
        raise ValueError("lambda grid is empty")
    if any(not 0.5 <= g < 1.0 for g in grid):
        raise ValueError(f"grid values must lie in [0.5, 1): {list(grid)}")
    xi, xj = as_image(xi), as_image(xj)
    check_same_shape(xi, xj)
    best_lam, best = None, -math.inf
    for lam in sorted(grid):
        mixed = _combine([xi, xj], (lam, 1.0 - lam))
        value = min(score(mixed, xi, metric), score(mixed, xj, metric))
        if value > best:
            best_lam, best = lam, value
    return float(best_lam)
