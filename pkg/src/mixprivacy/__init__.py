"""Mixup-based image obfuscation with privacy measured by image-quality metrics."""

from .imgcore import gaussian_blur, load_image, make_rng, resize_bilinear, save_image, to_grayscale
from .metrics import Metric, dhaar, dssim, frechet_distance, mse, phash_distance, score, score_sample
from .obfuscate import (
    ObfuscatedSample,
    ObfuscationParams,
    Scheme,
    blur_mix,
    choose_lambda,
    graft_mix,
    mix,
    noise_mix,
    pixelize_mix,
    shuffle_mix,
)

__version__ = "0.1.0"
