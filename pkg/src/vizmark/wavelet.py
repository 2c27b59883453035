"""Single-level orthonormal Haar transform, applied per channel.

The 2x2 analysis is the orthonormal Haar butterfly: for a block
(a, b, c, d) laid out row-major,

    ll = (a + b + c + d) / 2      lh = (a - b + c - d) / 2
    hl = (a + b - c - d) / 2      hh = (a - b - c + d) / 2

The transform is its own transpose-inverse, so reconstruction is exact
(up to float roundoff) and energy is preserved. All functions accept
arbitrary leading batch axes: shapes are (..., H, W, C).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class SubbandSet:
    """The four half-resolution subbands of one analysis level."""

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray
    source_height: int
    source_width: int

    def stack(self):
        """Concatenate subbands along the channel axis: (..., H/2, W/2, 4C)."""
        return np.concatenate([self.ll, self.lh, self.hl, self.hh], axis=-1)


def _check_even(h, w):
    if h % 2 or w % 2:
        raise ShapeError(f"height and width must be even, got {h}x{w}")


def dwt(img):
    """Analyze an even-sized raster into a SubbandSet."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim < 3:
        raise ShapeError(f"expected (..., H, W, C), got shape {img.shape}")
    h, w = img.shape[-3], img.shape[-2]
    _check_even(h, w)
    a = img[..., 0::2, 0::2, :]
    b = img[..., 0::2, 1::2, :]
    c = img[..., 1::2, 0::2, :]
    d = img[..., 1::2, 1::2, :]
    return SubbandSet(
        ll=(a + b + c + d) / 2.0,
        lh=(a - b + c - d) / 2.0,
        hl=(a + b - c - d) / 2.0,
        hh=(a - b - c + d) / 2.0,
        source_height=h,
        source_width=w,
    )


def idwt(sb):
    """Exact inverse of :func:`dwt`.

    Intermediate values may leave [0,1]; clamping is the caller's job at
    final pipeline outputs only.
    """
    ll, lh, hl, hh = sb.ll, sb.lh, sb.hl, sb.hh
    if not (ll.shape == lh.shape == hl.shape == hh.shape):
        raise ShapeError(
            f"subband shapes differ: {ll.shape} {lh.shape} {hl.shape} {hh.shape}"
        )
    out_shape = ll.shape[:-3] + (sb.source_height, sb.source_width, ll.shape[-1])
    out = np.empty(out_shape, dtype=np.float64)
    out[..., 0::2, 0::2, :] = (ll + lh + hl + hh) / 2.0
    out[..., 0::2, 1::2, :] = (ll - lh + hl - hh) / 2.0
    out[..., 1::2, 0::2, :] = (ll + lh - hl - hh) / 2.0
    out[..., 1::2, 1::2, :] = (ll - lh - hl + hh) / 2.0
    return out


def dwt_stack(img):
    """DWT with subbands stacked channel-wise: (..., H/2, W/2, 4C).

    Channel order is [ll | lh | hl | hh], each group C channels wide.
    This is the stream layout the coupling network operates on.
    """
    return dwt(img).stack()


def idwt_stack(stacked, height, width):
    """Inverse of :func:`dwt_stack` for a (..., H/2, W/2, 4C) array."""
    c4 = stacked.shape[-1]
    if c4 % 4:
        raise ShapeError(f"stacked channel count must be divisible by 4, got {c4}")
    c = c4 // 4
    sb = SubbandSet(
        ll=stacked[..., 0 * c : 1 * c],
        lh=stacked[..., 1 * c : 2 * c],
        hl=stacked[..., 2 * c : 3 * c],
        hh=stacked[..., 3 * c : 4 * c],
        source_height=height,
        source_width=width,
    )
    return idwt(sb)
