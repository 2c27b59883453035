"""Raster image I/O and overlay rendering.

Images are numpy arrays of shape (H, W, C), C in {1, 3}, float64, values
in [0, 1]. Storage is 8-bit: a pixel value v maps to v/255 on load and
round(v*255) on save, so PNG round-trips within 1/255 per value.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, GeometryError, ShapeError


@dataclass
class OverlayStyle:
    """How detected regions are drawn on top of a base image."""

    contour_color: tuple = (0.0, 1.0, 0.0)
    line_width: int = 2
    fill_alpha: float = 0.0

    def __post_init__(self):
        if self.line_width < 1:
            raise ValueError(f"line_width must be >= 1, got {self.line_width}")
        if not 0.0 <= self.fill_alpha <= 1.0:
            raise ValueError(f"fill_alpha must be in [0,1], got {self.fill_alpha}")


# Green outline, the convention the intent agents are prompted with.
GREEN_OUTLINE = OverlayStyle(contour_color=(0.0, 1.0, 0.0), line_width=2, fill_alpha=0.0)
# Human-friendly spotlight variant: translucent fill inside the outline.
GREEN_SPOTLIGHT = OverlayStyle(contour_color=(0.0, 1.0, 0.0), line_width=2, fill_alpha=0.3)


def validate_image(img, require_even=False):
    """Check the (H, W, C) float-in-[0,1] contract; returns the array."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ShapeError(f"expected (H, W, C) with C in {{1,3}}, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values outside [0,1]")
    if require_even and (img.shape[0] % 2 or img.shape[1] % 2):
        raise ShapeError(f"height and width must be even, got {img.shape[:2]}")
    return img


def load_image(path):
    """Load a PNG or JPEG file into a float image in [0,1]."""
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "JPEG"):
                raise FormatError(f"unsupported format {im.format!r} for {path}")
            if im.mode in ("L", "I;16"):
                im = im.convert("L")
                arr = np.asarray(im, dtype=np.float64)[:, :, None]
            else:
                im = im.convert("RGB")
                arr = np.asarray(im, dtype=np.float64)
    except UnidentifiedImageError as exc:
        raise FormatError(f"cannot decode {path}: {exc}") from exc
    return arr / 255.0


def save_image(img, path, format=None, jpeg_quality=95):
    """Write an image as PNG (lossless at 8-bit) or baseline JPEG.

    ``format`` defaults from the file extension. PNG round-trips
    bit-exactly after 8-bit quantization; JPEG is lossy.
    """
    img = validate_image(img)
    if format is None:
        ext = os.path.splitext(path)[1].lower()
        format = {"png": "png", "jpg": "jpeg", "jpeg": "jpeg"}.get(ext.lstrip("."))
        if format is None:
            raise FormatError(f"cannot infer format from extension of {path!r}")
    format = format.lower()
    if format not in ("png", "jpeg"):
        raise FormatError(f"unsupported format {format!r}")
    if format == "jpeg" and not 1 <= int(jpeg_quality) <= 100:
        raise ValueError(f"jpeg_quality must be in 1..100, got {jpeg_quality}")
    arr = to_uint8(img)
    if arr.shape[2] == 1:
        pil = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr, mode="RGB")
    if format == "png":
        pil.save(path, format="PNG")
    else:
        pil.save(path, format="JPEG", quality=int(jpeg_quality))


def to_uint8(img):
    """Quantize a [0,1] float image to uint8 by round(v*255)."""
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(arr):
    """Inverse of :func:`to_uint8` up to quantization: v/255."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr / 255.0


def pad_to_even(img):
    """Edge-replicate the right/bottom border so H and W become even.

    Returns (padded, (orig_h, orig_w)); crop back with :func:`crop_to`.
    """
    h, w = img.shape[:2]
    ph, pw = h % 2, w % 2
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")
    return img, (h, w)


def crop_to(img, size):
    """Crop an image back to (h, w) after :func:`pad_to_even`."""
    h, w = size
    return img[:h, :w, :]


def render_overlay(base, regions, style=GREEN_OUTLINE):
    """Draw region contours (and optional bbox fill) onto a copy of base.

    Contour pixels are stamped with ``line_width`` x ``line_width``
    squares of ``contour_color``; with ``fill_alpha`` > 0 the bbox
    interior is alpha-blended toward the same color. Nothing outside the
    union of region bboxes dilated by ``line_width`` is touched.
    """
    base = validate_image(base)
    h, w, c = base.shape
    out = base.copy()
    color = np.asarray(style.contour_color[:c], dtype=np.float64)
    halo = style.line_width // 2
    for region in regions:
        x0, y0, x1, y1 = region.bbox
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise GeometryError(f"region {region.id} bbox {region.bbox} outside {w}x{h}")
        if style.fill_alpha > 0.0:
            a = style.fill_alpha
            out[y0:y1, x0:x1, :] = (1.0 - a) * out[y0:y1, x0:x1, :] + a * color
        for (px, py) in region.contour:
            ya, yb = max(0, py - halo), min(h, py - halo + style.line_width)
            xa, xb = max(0, px - halo), min(w, px - halo + style.line_width)
            out[ya:yb, xa:xb, :] = color
    return out
