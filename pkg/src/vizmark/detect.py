"""Tamper localization: revealed map -> binary mask -> labeled regions.

The threshold rule: a pixel is flagged when the largest per-channel
absolute residual between the agreed map and the revealed map reaches
tau (default 0.2). Regions are 8-connected components of the mask with
Moore-traced closed contours, largest first.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ShapeError
from .image import GREEN_OUTLINE, load_image, render_overlay, save_image
from .inn import realize_location_map, reveal


@dataclass
class DetectionConfig:
    tau: float = 0.2
    min_area: int = 16
    connectivity: int = 8
    morphology: str = "none"  # "none" | "open-close"
    morph_radius: int = 1

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0,1), got {self.tau}")
        if self.min_area < 0:
            raise ValueError(f"min_area must be >= 0, got {self.min_area}")
        if self.connectivity not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.morphology not in ("none", "open-close"):
            raise ValueError(f"unknown morphology {self.morphology!r}")
        if self.morph_radius < 1:
            raise ValueError(f"morph_radius must be >= 1, got {self.morph_radius}")


@dataclass
class TamperMask:
    bits: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got {self.bits.shape}")

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]

    def to_image(self):
        return self.bits[:, :, None].astype(np.float64)


@dataclass
class TamperRegion:
    id: int
    bbox: tuple  # (x0, y0, x1, y1) half-open
    area: int
    contour: list  # closed loop of (x, y), first == last
    component_label: str = None


def residual_mask(original, revealed, cfg=None):
    """Threshold the per-pixel max-channel residual at cfg.tau."""
    cfg = cfg or DetectionConfig()
    original = np.asarray(original, dtype=np.float64)
    revealed = np.asarray(revealed, dtype=np.float64)
    if original.shape != revealed.shape:
        raise ShapeError(f"shape mismatch {original.shape} vs {revealed.shape}")
    d = np.abs(original - revealed).max(axis=-1)
    bits = d >= cfg.tau
    if cfg.morphology == "open-close":
        r = cfg.morph_radius
        st = np.ones((2 * r + 1, 2 * r + 1), dtype=bool)
        bits = ndimage.binary_opening(bits, structure=st)
        bits = ndimage.binary_closing(bits, structure=st)
    return TamperMask(bits)


def _moore_trace(comp):
    """Clockwise Moore boundary walk from the topmost-leftmost pixel.

    Returns a closed loop of (x, y) points (first repeated last).
    """
    ys, xs = np.nonzero(comp)
    order = np.lexsort((xs, ys))  # topmost, then leftmost
    sy, sx = int(ys[order[0]]), int(xs[order[0]])
    obj = np.pad(comp, 1, constant_values=False)
    s = (sy + 1, sx + 1)
    # ring of 8 neighbours in clockwise order starting NW
    nbrs = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)]
    contour = [(sx, sy)]
    p = s
    b = 0  # search starts toward NW; W/NW/N/NE of the start are background
    while True:
        found = False
        for i in range(8):
            idx = (b + i) % 8
            dy, dx = nbrs[idx]
            q = (p[0] + dy, p[1] + dx)
            if obj[q]:
                p = q
                b = (idx + 5) % 8  # backtrack: neighbour before the hit
                found = True
                break
        if not found or p == s:
            break
        contour.append((p[1] - 1, p[0] - 1))
    contour.append((sx, sy))
    return contour


def extract_regions(mask, cfg=None):
    """Connected components -> sorted TamperRegion list.

    Components smaller than cfg.min_area are dropped; survivors are
    ordered by descending area (scan order breaks ties) with ids 0..n-1.
    """
    cfg = cfg or DetectionConfig()
    bits = mask.bits if isinstance(mask, TamperMask) else np.asarray(mask, dtype=bool)
    if cfg.connectivity == 8:
        structure = np.ones((3, 3), dtype=bool)
    else:
        structure = ndimage.generate_binary_structure(2, 1)
    labels, n = ndimage.label(bits, structure=structure)
    regions = []
    order = 0
    areas = ndimage.sum_labels(bits, labels, index=np.arange(1, n + 1))
    for lab in range(1, n + 1):
        area = int(areas[lab - 1])
        if area < cfg.min_area or area == 0:
            continue
        comp = labels == lab
        ys, xs = np.nonzero(comp)
        bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
        regions.append((area, order, bbox, _moore_trace(comp)))
        order += 1
    regions.sort(key=lambda r: (-r[0], r[1]))
    return [
        TamperRegion(id=i, bbox=bbox, area=area, contour=contour)
        for i, (area, _ord, bbox, contour) in enumerate(regions)
    ]


def detect_pipeline(model, map_pattern, suspect, cfg=None):
    """reveal -> residual_mask -> extract_regions -> overlay."""
    cfg = cfg or DetectionConfig()
    suspect = np.asarray(suspect, dtype=np.float64)
    if suspect.ndim != 3 or suspect.shape[0] % 2 or suspect.shape[1] % 2:
        raise ShapeError(f"suspect must be even-sized (H, W, C), got {suspect.shape}")
    h, w, c = suspect.shape
    original = realize_location_map(map_pattern, h, w, channels=c)
    revealed, _cover = reveal(model, suspect)
    mask = residual_mask(original, revealed, cfg)
    regions = extract_regions(mask, cfg)
    overlay = render_overlay(suspect, regions, GREEN_OUTLINE)
    return mask, regions, overlay


# ---------------------------------------------------------------------------
# artifact export
# ---------------------------------------------------------------------------


def save_mask(mask, path):
    save_image(mask.to_image(), path, format="png")


def load_mask(path):
    return TamperMask(load_image(path)[:, :, 0] > 0.5)


def regions_to_json(regions):
    return [
        {
            "id": r.id,
            "bbox": list(r.bbox),
            "area": r.area,
            "contour": [list(pt) for pt in r.contour],
        }
        for r in regions
    ]


def save_regions(regions, path):
    with open(path, "w") as fh:
        json.dump(regions_to_json(regions), fh, indent=2)
        fh.write("\n")
