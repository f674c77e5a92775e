"""De-obfuscation attacks and privacy-degradation reports."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from .imgcore import Image, as_image, gaussian_blur, quantize, sigma_for_ksize
from .metrics import Metric, score_sample


@dataclass(frozen=True)
class AttackReport:
    sample_id: str
    metric: Metric
    score_before: float
    score_after: float

    @property
    def relative_drop(self) -> float:
        if self.score_before > 0:
            return (self.score_before - self.score_after) / self.score_before
        return 0.0


def wiener_filter(img: Image, window: int = 3, noise_power: float | None = None) -> Image:
    """Adaptive local-statistics (Lee/Wiener) filter, per channel.

    Local mean ``m`` and variance ``v`` come from a ``window`` x ``window`` box with
    replicated edges; the output is ``m + max(v - n, 0) / max(v, n) * (x - m)``.
    ``noise_power=None`` estimates ``n`` as the mean local variance of the channel.
    """
    img = as_image(img)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        x = img[:, :, c]
        m = uniform_filter(x, window, mode="nearest")
        v = np.maximum(uniform_filter(x * x, window, mode="nearest") - m * m, 0.0)
        n = float(v.mean()) if noise_power is None else float(noise_power)
        den = np.maximum(v, n)
        gain = np.divide(np.maximum(v - n, 0.0), den, out=np.zeros_like(v), where=den > 0)
        out[:, :, c] = m + gain * (x - m)
    return out


def gaussian_denoise(img: Image, sigma: float = 0.0, ksize: int = 5) -> Image:
    """Gaussian smoothing; ``sigma <= 0`` derives sigma from ``ksize``."""
    if ksize > 1 and sigma <= 0:
        sigma = sigma_for_ksize(ksize)
    return gaussian_blur(img, sigma, ksize)


def nlmeans_denoise(img: Image, h: float = 3.0, h_color: float = 3.0, template: int = 7, search: int = 21) -> Image:
    """OpenCV non-local-means denoising (library defaults). Needs ``opencv-python``."""
    try:
        import cv2
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise RuntimeError("nlmeans attack needs opencv-python (pip install opencv-python-headless)") from exc
    img = as_image(img)
    data = quantize(img).astype(np.uint8)
    if img.shape[2] == 3:
        res = cv2.fastNlMeansDenoisingColored(np.ascontiguousarray(data), None, h, h_color, template, search)
    else:
        res = cv2.fastNlMeansDenoising(np.ascontiguousarray(data[:, :, 0]), None, h, template, search)[:, :, None]
    return res.astype(np.float64)


def identity(img: Image) -> Image:
    return as_image(img)


ATTACKS: dict[str, Callable[..., Image]] = {
    "identity": identity,
    "wiener": wiener_filter,
    "gaussian-denoise": gaussian_denoise,
    "nlmeans": nlmeans_denoise,
}


def make_attack(name: str, **params) -> Callable[[Image], Image]:
    try:
        fn = ATTACKS[name]
    except KeyError:
        raise ValueError(f"unknown attack {name!r}; expected one of {sorted(ATTACKS)}") from None
    return partial(fn, **params) if params else fn


def evaluate_attack(
    samples: Sequence,
    sources: Sequence[Sequence[Image]],
    attack: Callable[[Image], Image] | str,
    metric="dssim",
    sample_ids: Sequence[str] | None = None,
) -> list[AttackReport]:
    """Score each sample before and after ``attack`` against its own sources.

    ``samples`` may be :class:`ObfuscatedSample` objects or bare images.
    """
    if isinstance(attack, str):
        attack = make_attack(attack)
    metric = Metric.parse(metric)
    if len(sources) != len(samples):
        raise ValueError(f"{len(samples)} samples but {len(sources)} source lists")
    if sample_ids is None:
        sample_ids = [str(i) for i in range(len(samples))]
    reports = []
    for sid, sample, srcs in zip(sample_ids, samples, sources):
        if not srcs:
            raise ValueError(f"sample {sid}: missing sources")
        image = sample.image if hasattr(sample, "image") else as_image(sample)
        before = score_sample(image, srcs, metric)
        after = score_sample(attack(image), srcs, metric)
        reports.append(AttackReport(sid, metric, before, after))
    return reports


def summarize(reports: Sequence[AttackReport]) -> dict[str, float]:
    if not reports:
        return {"count": 0, "mean_before": float("nan"), "mean_after": float("nan"), "mean_drop": float("nan")}
    return {
        "count": len(reports),
        "mean_before": float(np.mean([r.score_before for r in reports])),
        "mean_after": float(np.mean([r.score_after for r in reports])),
        "mean_drop": float(np.mean([r.relative_drop for r in reports])),
    }


def write_reports(reports: Sequence[AttackReport], path) -> None:
    """``sample_id,metric,before,after,relative_drop`` rows plus a ``mean`` summary row."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "metric", "before", "after", "relative_drop"])
        for r in reports:
            w.writerow([r.sample_id, r.metric.value, f"{r.score_before:.9g}", f"{r.score_after:.9g}", f"{r.relative_drop:.9g}"])
        s = summarize(reports)
        metric = reports[0].metric.value if reports else ""
        w.writerow(["mean", metric, f"{s['mean_before']:.9g}", f"{s['mean_after']:.9g}", f"{s['mean_drop']:.9g}"])
