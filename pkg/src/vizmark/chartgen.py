"""Synthetic chart rendering and programmatic tampering.

Everything here is deterministic: the same ChartSpec rasterizes to the same
bytes, and a corpus regenerated with the same seed is byte-identical. The
generator knows its own layout exactly, so tamper ops come with a truth mask
computed as the literal pixel-difference support, and every op carries the
method label and component it was designed to exercise.

Charts are deliberately plain: axes, ticks, grouped marks, small dash
glyphs standing in for text labels, and a bordered legend box. No fonts.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .image import save_image, validate_image
from .intent import ComponentLabel, TamperMethod

WHITE = (1.0, 1.0, 1.0)
BLACK = (0.0, 0.0, 0.0)
DASH_GRAY = (0.3, 0.3, 0.3)

BASE_PALETTE = (
    (0.173, 0.443, 0.710),
    (0.871, 0.443, 0.149),
    (0.235, 0.600, 0.263),
    (0.784, 0.227, 0.235),
    (0.549, 0.404, 0.682),
)

TAMPER_KINDS = (
    "paint_circle", "paint_rect", "paint_line",
    "copy_region", "delete_region", "recolor_region",
)


@dataclass(frozen=True)
class ChartSpec:
    kind: str  # bar | line | scatter
    series: tuple  # ((label, (v0, v1, ...)), ...)
    palette: tuple = BASE_PALETTE
    size: tuple = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("bar", "line", "scatter"):
            raise ValueError(f"unknown chart kind {self.kind!r}")
        if not self.series:
            raise ValueError("at least one series required")
        for label, values in self.series:
            if len(values) == 0:
                raise ValueError(f"series {label!r} has no values")
            if not all(np.isfinite(v) for v in values):
                raise ValueError(f"series {label!r} has non-finite values")
        h, w = self.size
        if h % 2 or w % 2:
            raise ValueError(f"size must be even, got {self.size}")
        if h < 32 or w < 32:
            raise ValueError(f"canvas too small to lay out a chart: {self.size}")


def chart_layout(h, w):
    """Fixed pixel boxes (x0, y0, x1, y1 inclusive) for a canvas size.

    Pure in (h, w) so other modules can reason about where the axes and
    the legend sit without rendering anything.
    """
    left = max(8, w // 10)
    bottom = max(8, h // 10)
    top = max(4, h // 16)
    right = max(4, w // 16)
    plot = (left, top, w - 1 - right, h - 1 - bottom)
    lw = max(10, w // 5)
    lh = max(6, h // 8)
    legend = (plot[2] - lw, plot[1] + 1, plot[2] - 1, plot[1] + lh)
    logo_s = max(4, min(h, w) // 12)
    return {
        "plot": plot,
        "x_axis": (left, plot[3] + 1, plot[2], h - 1),
        "y_axis": (0, top, left - 1, plot[3]),
        "legend": legend,
        "logo": (1, 1, logo_s, logo_s),
    }


# --- raster primitives -------------------------------------------------------


def _fill_rect(img, box, color):
    x0, y0, x1, y1 = box
    img[y0:y1 + 1, x0:x1 + 1] = color


def _fill_circle(img, cx, cy, r, color):
    h, w = img.shape[:2]
    yy, xx = np.ogrid[:h, :w]
    img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = color


def _draw_line(img, x0, y0, x1, y1, color, width=1):
    # Bresenham, thickened by a square pen
    h, w = img.shape[:2]
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    r = width // 2
    while True:
        ya, yb = max(0, y - r), min(h - 1, y + width - 1 - r)
        xa, xb = max(0, x - r), min(w - 1, x + width - 1 - r)
        img[ya:yb + 1, xa:xb + 1] = color
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy


# --- element geometry --------------------------------------------------------


def chart_elements(spec):
    """Pixel geometry of every drawable element, keyed by role.

    Returned boxes are (x0, y0, x1, y1) inclusive. The renderer draws from
    this dict and tamper recipes target it, so the two always agree.
    """
    h, w = spec.size
    lay = chart_layout(h, w)
    px0, py0, px1, py1 = lay["plot"]
    n = len(spec.series)
    m = max(len(vals) for _, vals in spec.series)
    vmax = max(max(vals) for _, vals in spec.series)
    vmax = vmax if vmax > 0 else 1.0
    usable_h = (py1 - py0) - 4  # headroom for label dashes
    group_w = (px1 - px0 + 1) // m
    centers = [px0 + g * group_w + group_w // 2 for g in range(m)]

    bars, points, dashes = [], [], []
    if spec.kind == "bar":
        bw = max(1, (group_w - 2) // n)
        for i, (_, vals) in enumerate(spec.series):
            for g, v in enumerate(vals):
                hp = max(1, int(round(v / vmax * usable_h)))
                x0 = px0 + g * group_w + 1 + i * bw
                bars.append((i, g, (x0, py1 - hp + 1, x0 + bw - 1, py1)))
                cx = x0 + (bw - 1) // 2
                dashes.append((i, g, (cx - 1, py1 - hp - 2, cx + 1, py1 - hp - 2)))
    else:
        jit = np.random.default_rng(spec.seed)
        rr = max(1, min(h, w) // 32)
        for i, (_, vals) in enumerate(spec.series):
            for g, v in enumerate(vals):
                cx = centers[g]
                cy = py1 - max(1, int(round(v / vmax * usable_h)))
                if spec.kind == "scatter":
                    cx = int(np.clip(cx + jit.integers(-2, 3), px0 + rr, px1 - rr))
                points.append((i, g, (cx, cy), rr))
                dashes.append((i, g, (cx - 1, cy - rr - 2, cx + 1, cy - rr - 2)))

    lx0, ly0, lx1, ly1 = lay["legend"]
    swatches = []
    row_h = 4
    for i in range(min(n, max(1, (ly1 - ly0 - 1) // row_h))):
        sy = ly0 + 2 + i * row_h
        swatches.append((i, (lx0 + 2, sy, lx0 + 4, sy + 2)))

    ticks_x = [(cx, (cx, py1 + 1, cx, py1 + 2)) for cx in centers]
    tick_labels = [(cx, (cx - 1, py1 + 4, cx + 1, py1 + 4)) for cx in centers]
    ticks_y = []
    for k in range(1, 4):
        ty = py1 - k * (py1 - py0) // 4
        ticks_y.append((ty, (px0 - 3, ty, px0 - 2, ty)))

    return {
        "layout": lay,
        "bars": bars,
        "points": points,
        "label_dashes": dashes,
        "legend_swatches": swatches,
        "ticks_x": ticks_x,
        "ticks_y": ticks_y,
        "tick_labels": tick_labels,
        "group_centers": centers,
        "vmax": vmax,
    }


def render_chart(spec):
    """Rasterize a spec onto a white canvas. Bit-identical per spec."""
    h, w = spec.size
    els = chart_elements(spec)
    lay = els["layout"]
    px0, py0, px1, py1 = lay["plot"]
    img = np.ones((h, w, 3), dtype=np.float64)

    _draw_line(img, px0 - 1, py0, px0 - 1, py1 + 1, BLACK)
    _draw_line(img, px0 - 1, py1 + 1, px1, py1 + 1, BLACK)
    for _, box in els["ticks_x"]:
        _fill_rect(img, box, BLACK)
    for _, box in els["ticks_y"]:
        _fill_rect(img, box, BLACK)
    for _, box in els["tick_labels"]:
        _fill_rect(img, box, DASH_GRAY)

    pal = spec.palette
    for i, g, box in els["bars"]:
        _fill_rect(img, box, pal[i % len(pal)])
    if spec.kind == "line":
        per_series = {}
        for i, g, (cx, cy), rr in els["points"]:
            per_series.setdefault(i, []).append((g, cx, cy))
        for i, pts in per_series.items():
            pts.sort()
            for (_, xa, ya), (_, xb, yb) in zip(pts, pts[1:]):
                _draw_line(img, xa, ya, xb, yb, pal[i % len(pal)])
    for i, g, (cx, cy), rr in els["points"]:
        _fill_circle(img, cx, cy, rr, pal[i % len(pal)])
    for i, g, box in els["label_dashes"]:
        _fill_rect(img, box, DASH_GRAY)

    lx0, ly0, lx1, ly1 = lay["legend"]
    _fill_rect(img, (lx0, ly0, lx1, ly1), WHITE)
    _draw_line(img, lx0, ly0, lx1, ly0, BLACK)
    _draw_line(img, lx0, ly1, lx1, ly1, BLACK)
    _draw_line(img, lx0, ly0, lx0, ly1, BLACK)
    _draw_line(img, lx1, ly0, lx1, ly1, BLACK)
    for i, (sx0, sy0, sx1, sy1) in els["legend_swatches"]:
        _fill_rect(img, (sx0, sy0, sx1, sy1), pal[i % len(pal)])
        _fill_rect(img, (sx1 + 2, sy0 + 1, lx1 - 2, sy0 + 1), DASH_GRAY)
    return img


# --- tampering ---------------------------------------------------------------


@dataclass
class TamperOp:
    """One scripted manipulation with its ground-truth annotation."""

    kind: str
    geometry: tuple
    params: dict = field(default_factory=dict)
    method_label: TamperMethod = TamperMethod.OTHERS
    intent_text: str = ""
    component: ComponentLabel = ComponentLabel.REGION
    tamper_text: str = ""

    def __post_init__(self):
        if self.kind not in TAMPER_KINDS:
            raise ValueError(f"unknown tamper kind {self.kind!r}")

    def region_text(self):
        box = self.bbox()
        return f"box x={box[0]}..{box[2]}, y={box[1]}..{box[3]}"

    def bbox(self):
        if self.kind == "paint_circle":
            cx, cy, r = self.geometry
            return (cx - r, cy - r, cx + r, cy + r)
        if self.kind == "copy_region":
            x0, y0, x1, y1 = self.geometry
            dx, dy = self.params["offset"]
            return (x0 + dx, y0 + dy, x1 + dx, y1 + dy)
        return tuple(self.geometry)


def _check_box(box, h, w):
    x0, y0, x1, y1 = box
    if not (0 <= x0 <= x1 < w and 0 <= y0 <= y1 < h):
        raise GeometryError(f"box {box} outside {w}x{h} canvas")


def _apply_one(img, op):
    h, w = img.shape[:2]
    if op.kind == "paint_rect":
        _check_box(op.geometry, h, w)
        _fill_rect(img, op.geometry, op.params.get("color", BLACK))
    elif op.kind == "paint_circle":
        cx, cy, r = op.geometry
        _check_box((cx - r, cy - r, cx + r, cy + r), h, w)
        _fill_circle(img, cx, cy, r, op.params.get("color", BLACK))
    elif op.kind == "paint_line":
        x0, y0, x1, y1 = op.geometry
        _check_box((min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1)), h, w)
        _draw_line(img, x0, y0, x1, y1, op.params.get("color", BLACK),
                   op.params.get("width", 1))
    elif op.kind == "copy_region":
        x0, y0, x1, y1 = op.geometry
        dx, dy = op.params["offset"]
        _check_box(op.geometry, h, w)
        _check_box((x0 + dx, y0 + dy, x1 + dx, y1 + dy), h, w)
        patch = img[y0:y1 + 1, x0:x1 + 1].copy()
        img[y0 + dy:y1 + dy + 1, x0 + dx:x1 + dx + 1] = patch
    elif op.kind == "delete_region":
        _check_box(op.geometry, h, w)
        _fill_rect(img, op.geometry, op.params.get("fill", WHITE))
    elif op.kind == "recolor_region":
        _check_box(op.geometry, h, w)
        x0, y0, x1, y1 = op.geometry
        view = img[y0:y1 + 1, x0:x1 + 1]
        to = np.asarray(op.params["to_color"], dtype=np.float64)
        src = op.params.get("from_color")
        if src is None:
            hit = np.abs(view - np.asarray(WHITE)).max(axis=-1) > 1e-9
        else:
            tol = op.params.get("tol", 1.5 / 255.0)
            hit = np.abs(view - np.asarray(src, dtype=np.float64)).max(axis=-1) <= tol
        view[hit] = to


def apply_tamper(img, ops):
    """Apply ops in order; truth mask is the exact pixel-diff support."""
    img = validate_image(np.asarray(img, dtype=np.float64))
    out = img.copy()
    for op in ops:
        _apply_one(out, op)
    from .detect import TamperMask

    bits = np.abs(out - img).max(axis=-1) > 0
    return out, TamperMask(bits)


# --- tamper recipes ----------------------------------------------------------
# Each recipe targets the rendered layout and yields an op exercising one
# method label. Together they cover all nine.


def _bar_like_boxes(els):
    if els["bars"]:
        return [(i, g, box) for i, g, box in els["bars"]]
    return [(i, g, (c[0] - r, c[1] - r, c[0] + r, c[1] + r))
            for i, g, c, r in els["points"]]


def _recipe_mdv(spec, els, rng):
    i, g, (x0, y0, x1, y1) = _pick(rng, _bar_like_boxes(els))
    color = spec.palette[i % len(spec.palette)]
    grow = int(rng.integers(3, 6))
    box = (x0, max(0, y0 - grow), x1, y0 - 1)
    return TamperOp("paint_rect", box, {"color": color}, TamperMethod.MDV,
                    "Exaggerate one value to change the comparison.",
                    ComponentLabel.REGION,
                    "Raised one mark so it reads as a larger value.")


def _recipe_ard(spec, els, rng):
    px0, py0, px1, py1 = els["layout"]["plot"]
    cx = int(rng.integers(px0 + 6, px1 - 6))
    cy = int(rng.integers(py0 + 6, py1 - 6))
    color = spec.palette[0]
    return TamperOp("paint_circle", (cx, cy, 2), {"color": color},
                    TamperMethod.ARD,
                    "Invent an extra data point to support a trend.",
                    ComponentLabel.REGION,
                    "Painted a new mark where no data point existed.")


def _recipe_dvd(spec, els, rng):
    i, g, (x0, y0, x1, y1) = _pick(rng, _bar_like_boxes(els))
    hh = max(1, min((y1 - y0 + 1) // 2, y0))  # keep the shifted copy on canvas
    src = (x0, y0, x1, y0 + hh - 1)
    return TamperOp("copy_region", src, {"offset": (0, -hh)},
                    TamperMethod.DVD,
                    "Make the visual size disagree with the stated value.",
                    ComponentLabel.REGION,
                    "Duplicated part of a mark so its size no longer "
                    "matches the value.")


def _recipe_hl(spec, els, rng):
    i, g, (x0, y0, x1, y1) = _pick(rng, els["label_dashes"])
    box = (max(0, x0 - 1), max(0, y0 - 1), x1 + 1, y1 + 1)
    return TamperOp("delete_region", box, {}, TamperMethod.HL,
                    "Obscure the true reading of that data point.",
                    ComponentLabel.DATA_LABELS,
                    "Erased the value label next to a data point.")


def _recipe_mcv(spec, els, rng):
    x0, y0, x1, y1 = els["layout"]["x_axis"]
    yy = y1 - 1
    return TamperOp("paint_line", (x0 + 2, yy, x1 - 2, yy),
                    {"color": DASH_GRAY, "width": 1}, TamperMethod.MCV,
                    "Shift the reference frame readers judge values by.",
                    ComponentLabel.AXIS,
                    "Overwrote the axis tick labels with a different scale.")


def _recipe_daa(spec, els, rng):
    px0, py0, px1, py1 = els["layout"]["plot"]
    lx0, ly0, lx1, ly1 = els["layout"]["legend"]
    ya = min(ly1 + 3, py1 - 1)
    return TamperOp("paint_line", (px0 + 2, py1 - 2, px1 - 2, ya),
                    {"color": (0.8, 0.1, 0.1), "width": 1}, TamperMethod.DAA,
                    "Suggest a trend the data does not show.",
                    ComponentLabel.ANNOTATION,
                    "Drew a guide line implying a strong upward trend.")


def _recipe_ml(spec, els, rng):
    i, (x0, y0, x1, y1) = _pick(rng, els["legend_swatches"])
    other = spec.palette[(i + 1) % len(spec.palette)]
    return TamperOp("recolor_region", (x0, y0, x1, y1),
                    {"from_color": spec.palette[i % len(spec.palette)],
                     "to_color": other}, TamperMethod.ML,
                    "Mislabel which series the colors stand for.",
                    ComponentLabel.LEGEND,
                    "Swapped a legend swatch to a different series color.")


def _recipe_arl(spec, els, rng):
    x0, y0, x1, y1 = els["layout"]["logo"]
    return TamperOp("paint_rect", (x0, y0, x1, y1), {"color": (0.1, 0.1, 0.5)},
                    TamperMethod.ARL,
                    "Borrow credibility from a fabricated source mark.",
                    ComponentLabel.LOGO,
                    "Stamped a logo block into the corner.")


def _recipe_mc(spec, els, rng):
    i, g, (x0, y0, x1, y1) = _pick(rng, _bar_like_boxes(els))
    swap = spec.palette[(i + 2) % len(spec.palette)]
    return TamperOp("recolor_region", (x0, y0, x1, y1),
                    {"from_color": spec.palette[i % len(spec.palette)],
                     "to_color": swap}, TamperMethod.MC,
                    "Blur the category boundaries the colors encode.",
                    ComponentLabel.COLORMAP,
                    "Recolored marks so two categories read as one.")


def _pick(rng, seq):
    return seq[int(rng.integers(0, len(seq)))]


RECIPES = {
    "MDV": ("paint_rect", _recipe_mdv),
    "ARD": ("paint_circle", _recipe_ard),
    "DVD": ("copy_region", _recipe_dvd),
    "HL": ("delete_region", _recipe_hl),
    "MCV": ("paint_line", _recipe_mcv),
    "DAA": ("paint_line", _recipe_daa),
    "ML": ("recolor_region", _recipe_ml),
    "ARL": ("paint_rect", _recipe_arl),
    "MC": ("recolor_region", _recipe_mc),
}


@dataclass
class CorpusItem:
    clean: np.ndarray
    tampered: np.ndarray
    truth_mask: "object"
    ops: list
    spec: ChartSpec = None


def random_chart_spec(rng, size=(64, 64)):
    """Draw a plausible random spec from an rng stream."""
    kind = ("bar", "line", "scatter")[int(rng.integers(0, 3))]
    n = int(rng.integers(1, 4))
    m = int(rng.integers(4, 7))
    series = tuple(
        (f"s{i}", tuple(float(v) for v in rng.uniform(1.0, 10.0, size=m)))
        for i in range(n)
    )
    order = rng.permutation(len(BASE_PALETTE))
    palette = tuple(BASE_PALETTE[k] for k in order)
    return ChartSpec(kind, series, palette, size, seed=int(rng.integers(2**31)))


def gen_corpus(n, kinds=None, ops_per_item=1, seed=0, root=None, size=(64, 64)):
    """Generate n chart/tamper/mask triples plus a manifest.

    kinds filters which TamperOp kinds may be used; per-item streams are
    derived as default_rng([seed, item]) so generation order (or parallel
    workers) cannot change the output. When root is given the corpus is
    written as <root>/{clean,tampered,mask}/NNNN.png and manifest.json.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if not 1 <= ops_per_item <= 3:
        raise ValueError("ops_per_item must be 1..3")
    kinds = set(kinds) if kinds is not None else set(TAMPER_KINDS)
    unknown = kinds - set(TAMPER_KINDS)
    if unknown:
        raise ValueError(f"unknown tamper kinds {sorted(unknown)}")
    allowed = [abbr for abbr, (kind, _) in RECIPES.items() if kind in kinds]
    if not allowed:
        raise ValueError("no tamper recipe matches the requested kinds")

    items, meta = [], []
    for idx in range(n):
        rng = np.random.default_rng([seed, idx])
        spec = random_chart_spec(rng, size)
        clean = render_chart(spec)
        els = chart_elements(spec)
        chosen = [allowed[int(k)] for k in
                  rng.choice(len(allowed), size=min(ops_per_item, len(allowed)),
                             replace=False)]
        while len(chosen) < ops_per_item:  # few kinds allowed: reuse
            chosen.append(allowed[int(rng.integers(0, len(allowed)))])
        ops = [RECIPES[abbr][1](spec, els, rng) for abbr in chosen]
        tampered, mask = apply_tamper(clean, ops)
        items.append(CorpusItem(clean, tampered, mask, ops, spec))
        meta.append({
            "id": f"{idx:04d}",
            "clean": f"clean/{idx:04d}.png",
            "tampered": f"tampered/{idx:04d}.png",
            "mask": f"mask/{idx:04d}.png",
            "chart_kind": spec.kind,
            "ops": [{
                "kind": op.kind,
                "geometry": [int(v) for v in np.ravel(op.geometry)],
                "params": _jsonable_params(op.params),
                "method": op.method_label.name,
                "method_name": op.method_label.value,
                "component": op.component.value,
                "region": op.region_text(),
                "tamper": op.tamper_text,
                "intent": op.intent_text,
            } for op in ops],
        })

    manifest = {
        "seed": int(seed),
        "n": int(n),
        "ops_per_item": int(ops_per_item),
        "size": [int(size[0]), int(size[1])],
        "kinds": sorted(kinds),
        "items": meta,
    }
    if root is not None:
        _write_corpus(root, items, manifest)
    return items, manifest


def _jsonable_params(params):
    out = {}
    for k, v in params.items():
        if isinstance(v, (tuple, list, np.ndarray)):
            out[k] = [float(x) for x in v]
        else:
            out[k] = v
    return out


def op_from_manifest(rec):
    """Rebuild a replayable TamperOp from one manifest op record."""
    params = dict(rec.get("params", {}))
    for k in ("color", "fill", "from_color", "to_color"):
        if k in params and params[k] is not None:
            params[k] = tuple(params[k])
    if "offset" in params:
        params["offset"] = tuple(int(v) for v in params["offset"])
    return TamperOp(rec["kind"], tuple(int(v) for v in rec["geometry"]),
                    params, TamperMethod[rec["method"]],
                    rec.get("intent", ""),
                    ComponentLabel(rec["component"]),
                    rec.get("tamper", ""))


def _write_corpus(root, items, manifest):
    from .detect import save_mask

    for sub in ("clean", "tampered", "mask"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    for idx, item in enumerate(items):
        name = f"{idx:04d}.png"
        save_image(item.clean, os.path.join(root, "clean", name))
        save_image(item.tampered, os.path.join(root, "tampered", name))
        save_mask(item.truth_mask, os.path.join(root, "mask", name))
    with open(os.path.join(root, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
