"""Benign transmission-noise channel between embed and reveal.

The semi-fragile contract: the watermark should survive these (Gaussian
noise, JPEG recompression, Poisson/shot noise) while breaking under
content edits. Training samples from this family so the posterior
estimator learns to compensate.
"""

import io

import numpy as np
from PIL import Image

from .image import from_uint8, to_uint8, validate_image

KINDS = ("none", "gaussian", "poisson", "jpeg")


class Degradation:
    """One channel realization: kind + parameter + seed.

    Same (kind, parameter, seed, image shape) always reproduces the same
    noise, which is what makes training and evaluation rerunnable.
    """

    __slots__ = ("kind", "sigma", "peak", "quality", "seed")

    def __init__(self, kind="none", sigma=0.0, peak=255.0, quality=90, seed=0):
        if kind not in KINDS:
            raise ValueError(f"unknown degradation kind {kind!r}")
        if kind == "gaussian" and not 0.0 <= sigma <= 1.0:
            raise ValueError(f"gaussian sigma must be in [0,1], got {sigma}")
        if kind == "poisson" and peak <= 0:
            raise ValueError(f"poisson peak must be positive, got {peak}")
        if kind == "jpeg" and not 1 <= int(quality) <= 100:
            raise ValueError(f"jpeg quality must be in 1..100, got {quality}")
        self.kind = kind
        self.sigma = float(sigma)
        self.peak = float(peak)
        self.quality = int(quality)
        self.seed = int(seed)

    def __repr__(self):
        arg = {
            "none": "",
            "gaussian": f"sigma={self.sigma}",
            "poisson": f"peak={self.peak}",
            "jpeg": f"quality={self.quality}",
        }[self.kind]
        return f"Degradation({self.kind}{', ' if arg else ''}{arg}, seed={self.seed})"


def _jpeg_cycle(img, quality):
    arr = to_uint8(img)
    if arr.shape[2] == 1:
        pil = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr, mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="JPEG", quality=quality)
    buf.seek(0)
    with Image.open(buf) as back:
        out = np.asarray(back.convert("L" if arr.shape[2] == 1 else "RGB"))
    return from_uint8(out)


def apply(deg, img):
    """Apply the channel; output stays a valid image in [0,1]."""
    img = validate_image(img)
    if deg.kind == "none":
        return img.copy()
    if deg.kind == "gaussian":
        rng = np.random.Generator(np.random.PCG64(deg.seed))
        noisy = img + rng.normal(0.0, deg.sigma, size=img.shape)
        return np.clip(noisy, 0.0, 1.0)
    if deg.kind == "poisson":
        rng = np.random.Generator(np.random.PCG64(deg.seed))
        counts = rng.poisson(img * deg.peak)
        return np.clip(counts / deg.peak, 0.0, 1.0)
    return _jpeg_cycle(img, deg.quality)


def apply_differentiable(deg, img):
    """Forward pass of the channel for training.

    Every supported kind has identity gradient: gaussian noise is an
    additive constant w.r.t. the input, and jpeg uses a straight-through
    estimator (forward = real codec, backward = identity). The caller's
    backward pass therefore passes gradients through unchanged; this
    function only defines the forward values.
    """
    if deg.kind == "poisson":
        raise ValueError("poisson degradation has no differentiable path (evaluation only)")
    return apply(deg, img)
