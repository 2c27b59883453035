"""Fidelity and mask-accuracy metrics, plus report writers.

PSNR/SSIM/RMSE measure how invisible the embedding is; IoU/F1 measure
localization accuracy against ground-truth masks; noise percentage is
the false-positive rate on untampered images.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ShapeError

SSIM_C1 = 0.0001  # (K1*peak)^2, K1=0.01, peak=1
SSIM_C2 = 0.0009  # (K2*peak)^2, K2=0.03
SSIM_WINDOW = 8


@dataclass
class FidelityReport:
    psnr: float
    ssim: float
    rmse: float
    lpips: object = None  # not computed (needs a pretrained perceptual net)


@dataclass
class MaskReport:
    iou: float
    f1: float
    noise_percentage: float


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """10*log10(1/MSE) at peak 1.0; identical inputs give float inf."""
    a, b = _pair(a, b)
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def rmse_map(a, b):
    a, b = _pair(a, b)
    return float(np.sqrt(((a - b) ** 2).mean()))


def ssim(a, b):
    """Mean SSIM over 8x8 non-overlapping windows, per channel.

    Right/bottom remainders that do not fill a window are ignored; inputs
    must offer at least one full window.
    """
    a, b = _pair(a, b)
    if a.ndim != 3:
        raise ShapeError(f"expected (H, W, C), got {a.shape}")
    h, w, c = a.shape
    ws = SSIM_WINDOW
    if h < ws or w < ws:
        raise ShapeError(f"need at least one {ws}x{ws} window, got {h}x{w}")
    hh, ww = h - h % ws, w - w % ws
    ta = a[:hh, :ww].reshape(hh // ws, ws, ww // ws, ws, c)
    tb = b[:hh, :ww].reshape(hh // ws, ws, ww // ws, ws, c)
    ta = ta.transpose(0, 2, 4, 1, 3).reshape(-1, ws * ws)
    tb = tb.transpose(0, 2, 4, 1, 3).reshape(-1, ws * ws)
    mu_a = ta.mean(axis=1)
    mu_b = tb.mean(axis=1)
    var_a = ta.var(axis=1)  # ddof=0
    var_b = tb.var(axis=1)
    cov = (ta * tb).mean(axis=1) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float((num / den).mean())


def _as_bits(mask):
    bits = getattr(mask, "bits", mask)
    bits = np.asarray(bits, dtype=bool)
    if bits.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got {bits.shape}")
    return bits


def mask_scores(pred, truth):
    """IoU, F1 (pixelwise, equals Dice) and noise percentage.

    Both-empty convention: iou = f1 = 1.0, so clean-on-clean evaluation
    is well defined. noise_percentage = |pred| / (H*W) regardless of
    truth, which is the reliability number for untampered images.
    """
    p = _as_bits(pred)
    t = _as_bits(truth)
    if p.shape != t.shape:
        raise ShapeError(f"shape mismatch {p.shape} vs {t.shape}")
    inter = int((p & t).sum())
    union = int((p | t).sum())
    psum, tsum = int(p.sum()), int(t.sum())
    iou = 1.0 if union == 0 else inter / union
    f1 = 1.0 if psum + tsum == 0 else 2.0 * inter / (psum + tsum)
    return MaskReport(iou=iou, f1=f1, noise_percentage=psum / p.size)


def fidelity(a, b):
    return FidelityReport(psnr=psnr(a, b), ssim=ssim(a, b), rmse=rmse_map(a, b))


# ---------------------------------------------------------------------------
# report output
# ---------------------------------------------------------------------------


def mean_ci95(values):
    """Sample mean and normal-approximation 95% half-width."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no values to aggregate")
    mean = float(arr.mean())
    if arr.size == 1:
        return mean, 0.0
    half = 1.96 * float(arr.std(ddof=1)) / math.sqrt(arr.size)
    return mean, half


def _jsonable(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return value


def write_image_report(report, path):
    """One JSON object per image; dataclasses are flattened."""
    if hasattr(report, "__dataclass_fields__"):
        report = asdict(report)
    clean = {k: _jsonable(v) for k, v in report.items()}
    with open(path, "w") as fh:
        json.dump(clean, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_aggregate_csv(rows, columns, path):
    """Per-item rows then mean / ci95 summary lines.

    ``rows`` is a list of dicts; ``columns`` fixes order. Numeric cells
    are rendered with %.6f so reruns are byte-identical. Infinite values
    (PSNR on identical images) stay out of the aggregate.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)

        def cell(v):
            if v is None or v == "":
                return ""
            if isinstance(v, str):
                return v
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            if isinstance(v, float):
                return f"{v:.6f}"
            return str(v)

        for row in rows:
            writer.writerow([cell(row.get(col)) for col in columns])
        for stat in ("mean", "ci95"):
            out = []
            for col in columns:
                vals = [
                    row[col]
                    for row in rows
                    if isinstance(row.get(col), (int, float))
                    and not isinstance(row.get(col), bool)
                    and math.isfinite(row[col])
                ]
                if not vals or col == columns[0]:
                    out.append(stat if col == columns[0] else "")
                    continue
                mean, half = mean_ci95(vals)
                out.append(f"{mean:.6f}" if stat == "mean" else f"{half:.6f}")
            writer.writerow(out)
