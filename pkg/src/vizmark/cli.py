"""Command line lifecycle: train, protect, tamper, detect, analyze,
gen-corpus, evaluate.

Option precedence everywhere is flags > config file (--config, JSON) >
built-in defaults. Exit codes: 0 success, 1 from `detect` means regions
were found (a scriptable triage signal, not an error), 2 and up for
errors. The API token for remote analysis comes only from the
VIZMARK_API_TOKEN environment variable, never a flag.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .chartgen import (
    TAMPER_KINDS,
    TamperOp,
    apply_tamper,
    gen_corpus,
    op_from_manifest,
    random_chart_spec,
    render_chart,
)
from . import degrade
from .degrade import Degradation
from .detect import (
    DetectionConfig,
    TamperMask,
    extract_regions,
    residual_mask,
    save_mask,
    save_regions,
)
from .errors import VizmarkError
from .image import (
    GREEN_OUTLINE,
    crop_to,
    load_image,
    pad_to_even,
    render_overlay,
    save_image,
)
from .inn import (
    InnConfig,
    InnModel,
    LocationMapPattern,
    embed,
    load_model,
    realize_location_map,
    reveal,
)
from .intent import HttpBackend, analyze, mock_backend
from .metrics import mask_scores, psnr, rmse_map, ssim, write_aggregate_csv
from .train import TrainConfig, fit


def _build_parser():
    top = argparse.ArgumentParser(prog="vizmark", description=__doc__)
    top.add_argument("--config", help="JSON config file; flags override it")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--cell", type=int, default=None,
                       help="location map checkerboard cell size")

    p = sub.add_parser("train", help="train a model on synthetic charts")
    common(p)
    p.add_argument("--out", required=True, help="checkpoint path (.vzmk)")
    p.add_argument("--n", type=int, default=None, help="training charts")
    p.add_argument("--size", default=None, help="chart canvas, e.g. 64x64")
    p.add_argument("--blocks", type=int, default=None)
    p.add_argument("--growth", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--lr-final", type=float, default=None,
                   help="linear lr decay target over the run")
    p.add_argument("--grad-clip", type=float, default=None,
                   help="global L2 gradient norm ceiling; 0 disables")
    p.add_argument("--degrade", default=None,
                   help="schedule, e.g. 'none,jpeg:90,gaussian:0.02'")
    p.add_argument("--log", default=None, help="iteration log path")

    p = sub.add_parser("protect", help="embed the location map into an image")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("tamper", help="apply one scripted edit to an image")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--op", required=True, choices=TAMPER_KINDS)
    p.add_argument("--geometry", required=True,
                   help="comma ints; rect/line/copy: x0,y0,x1,y1; circle: cx,cy,r")
    p.add_argument("--color", default=None, help="r,g,b in [0,1]")
    p.add_argument("--offset", default=None, help="dx,dy for copy_region")
    p.add_argument("--to-color", default=None, help="recolor_region target")
    p.add_argument("--from-color", default=None, help="recolor_region match")
    p.add_argument("--width", type=int, default=1, help="paint_line width")
    p.add_argument("--mask-out", default=None, help="write the edit's truth mask")

    p = sub.add_parser("detect", help="localize tampering in a suspect image")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--min-area", type=int, default=None)
    p.add_argument("--morphology", choices=("none", "open-close"), default=None)
    p.add_argument("--output-dir", default=None)

    p = sub.add_parser("analyze", help="detect, then explain regions via MLLM")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--min-area", type=int, default=None)
    p.add_argument("--morphology", choices=("none", "open-close"), default=None)
    p.add_argument("--backend", choices=("mock", "http"), default=None)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--retries", type=int, default=None)
    p.add_argument("--max-in-flight", type=int, default=None)
    p.add_argument("--output-dir", default=None)

    p = sub.add_parser("gen-corpus", help="generate charts + tampering + masks")
    common(p)
    p.add_argument("--out", required=True, help="corpus root directory")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--ops-per-item", type=int, default=None)
    p.add_argument("--size", default=None)
    p.add_argument("--kinds", default=None,
                   help="comma subset of " + ",".join(TAMPER_KINDS))

    p = sub.add_parser("evaluate", help="protect/tamper-replay/detect a corpus")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--degrade", default=None,
                   help="benign channel before reveal, e.g. jpeg:90")
    return top


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _ints(text):
    return tuple(int(v) for v in text.split(","))


def _size(text):
    sep = "x" if "x" in text else ","
    h, w = (int(v) for v in text.split(sep))
    return (h, w)


def _schedule(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if part == "none":
            out.append(Degradation("none"))
        elif part.startswith("jpeg:"):
            out.append(Degradation("jpeg", quality=int(part[5:])))
        elif part.startswith("gaussian:"):
            out.append(Degradation("gaussian", sigma=float(part[9:])))
        elif part.startswith("poisson:"):
            out.append(Degradation("poisson", peak=float(part[8:])))
        else:
            raise ValueError(f"bad degradation spec {part!r}")
    return tuple(out)


class _Opts:
    """flags > config file > defaults, looked up per key."""

    def __init__(self, args, config_path):
        self.args = args
        self.file = {}
        if config_path:
            with open(config_path) as fh:
                self.file = json.load(fh)

    def get(self, name, default=None):
        flag = getattr(self.args, name.replace("-", "_"), None)
        if flag is not None:
            return flag
        if name in self.file:
            return self.file[name]
        return default


def _load_checkpoint(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return load_model(path)


def _pattern(opt):
    return LocationMapPattern(cell=int(opt.get("cell", 16)))


def _detection_config(opt):
    return DetectionConfig(
        tau=float(opt.get("tau", 0.2)),
        min_area=int(opt.get("min_area", 16)),
        morphology=opt.get("morphology", "none"),
    )


def _protect_image(model, cover, pattern):
    """Pad odd inputs, embed, crop back to the original size."""
    padded, size = pad_to_even(cover)
    lmap = realize_location_map(pattern, padded.shape[0], padded.shape[1],
                                channels=padded.shape[2])
    protected = embed(model, padded, lmap)
    return crop_to(protected, size)


def _detect_arrays(model, suspect, pattern, cfg):
    """reveal -> residual -> regions, with odd-size pad/crop handling."""
    padded, (h, w) = pad_to_even(suspect)
    lmap = realize_location_map(pattern, padded.shape[0], padded.shape[1],
                                channels=padded.shape[2])
    revealed, _ = reveal(model, padded)
    mask = residual_mask(lmap, revealed, cfg)
    mask = TamperMask(mask.bits[:h, :w])
    regions = extract_regions(mask, cfg)
    overlay = render_overlay(suspect, regions, GREEN_OUTLINE)
    return mask, regions, overlay


def cmd_train(opt):
    size = _size(opt.get("size", "64x64"))
    n = int(opt.get("n", 32))
    seed = int(opt.get("seed", 0))
    charts = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        charts.append(render_chart(random_chart_spec(rng, size)))
    covers = np.stack(charts)
    # per-chart random cell grids, not n copies of the deployment map:
    # a single fixed payload lets the extractor memorize it and stop
    # reading the image, which kills tamper response
    cell = int(opt.get("cell", 16))
    if cell <= 0:
        raise ValueError(f"cell must be positive, got {cell}")
    ch, cw = -(-size[0] // cell), -(-size[1] // cell)
    cells = np.random.default_rng([seed, 999]).integers(0, 2, size=(n, ch, cw))
    grid = np.kron(cells, np.ones((1, cell, cell)))[:, :size[0], :size[1]]
    maps = np.repeat(grid[:, :, :, None], 3, axis=3).astype(np.float64)

    model = InnModel(InnConfig(
        blocks=int(opt.get("blocks", 4)),
        growth=int(opt.get("growth", 8)),
    ))
    schedule = _schedule(opt.get("degrade", "") or "")
    lr_final = opt.get("lr_final")
    cfg = TrainConfig(
        alpha=float(opt.get("alpha", 100.0)),
        beta=float(opt.get("beta", 1.0)),
        learning_rate=float(opt.get("learning_rate", 1e-4)),
        lr_final=float(lr_final) if lr_final is not None else None,
        grad_clip=float(opt.get("grad_clip", 0.0)),
        iterations=int(opt.get("iterations", 500)),
        batch_size=int(opt.get("batch_size", 4)),
        seed=seed,
        degradation_schedule=schedule,
        checkpoint_path=opt.get("out"),
        log_path=opt.get("log"),
    )
    history = fit(model, covers, maps, cfg)
    print(f"trained {cfg.iterations} iterations on {n} charts")
    print(f"final total={history[-1].total:.8f} -> {opt.get('out')}")
    return 0


def cmd_protect(opt):
    model = _load_checkpoint(opt.get("model"))
    cover = load_image(opt.get("in_path"))
    protected = _protect_image(model, cover, _pattern(opt))
    save_image(protected, opt.get("out"))
    val = psnr(cover, protected)
    print(f"psnr_db={'inf' if val == float('inf') else f'{val:.4f}'}")
    return 0


def cmd_tamper(opt):
    img = load_image(opt.get("in_path"))
    params = {}
    if opt.get("color"):
        params["color"] = _floats(opt.get("color"))
    if opt.get("offset"):
        params["offset"] = _ints(opt.get("offset"))
    if opt.get("to_color"):
        params["to_color"] = _floats(opt.get("to_color"))
    if opt.get("from_color"):
        params["from_color"] = _floats(opt.get("from_color"))
    if opt.get("width", 1) != 1:
        params["width"] = int(opt.get("width"))
    op = TamperOp(opt.get("op"), _ints(opt.get("geometry")), params)
    tampered, mask = apply_tamper(img, [op])
    save_image(tampered, opt.get("out"))
    if opt.get("mask_out"):
        save_mask(mask, opt.get("mask_out"))
    print(f"changed_pixels={int(mask.bits.sum())}")
    return 0


def _stem_paths(in_path, output_dir):
    base = os.path.basename(in_path)
    stem = base[:base.rfind(".")] if "." in base else base
    out = output_dir or os.path.dirname(in_path) or "."
    os.makedirs(out, exist_ok=True)
    return {
        "mask": os.path.join(out, stem + ".mask.png"),
        "regions": os.path.join(out, stem + ".regions.json"),
        "overlay": os.path.join(out, stem + ".overlay.png"),
        "intent": os.path.join(out, stem + ".intent.json"),
    }


def cmd_detect(opt):
    model = _load_checkpoint(opt.get("model"))
    suspect = load_image(opt.get("in_path"))
    mask, regions, overlay = _detect_arrays(
        model, suspect, _pattern(opt), _detection_config(opt))
    paths = _stem_paths(opt.get("in_path"), opt.get("output_dir"))
    save_mask(mask, paths["mask"])
    save_regions(regions, paths["regions"])
    save_image(overlay, paths["overlay"])
    print(f"regions={len(regions)}")
    return 1 if regions else 0


def _backend(opt):
    kind = opt.get("backend", "mock")
    if kind == "mock":
        return mock_backend()
    endpoint = opt.get("endpoint")
    if not endpoint:
        raise ValueError("http backend needs --endpoint")
    return HttpBackend(
        endpoint,
        timeout=float(opt.get("timeout", 60.0)),
        retries=int(opt.get("retries", 2)),
        max_in_flight=int(opt.get("max_in_flight", 4)),
    )


def cmd_analyze(opt):
    model = _load_checkpoint(opt.get("model"))
    suspect = load_image(opt.get("in_path"))
    mask, regions, overlay = _detect_arrays(
        model, suspect, _pattern(opt), _detection_config(opt))
    report = analyze(_backend(opt), suspect, regions,
                     image_ref=os.path.basename(opt.get("in_path")))
    paths = _stem_paths(opt.get("in_path"), opt.get("output_dir"))
    with open(paths["intent"], "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    for e in report.entries:
        flag = "" if e.conformant else " [non-conformant]"
        print(f"{e.tampered_region}: {e.method.value}{flag}")
    print(f"entries={len(report.entries)} -> {paths['intent']}")
    return 0


def cmd_gen_corpus(opt):
    kinds = opt.get("kinds")
    gen_corpus(
        int(opt.get("n", 16)),
        kinds=set(kinds.split(",")) if kinds else None,
        ops_per_item=int(opt.get("ops_per_item", 1)),
        seed=int(opt.get("seed", 0)),
        root=opt.get("out"),
        size=_size(opt.get("size", "64x64")),
    )
    print(f"wrote {int(opt.get('n', 16))} items to {opt.get('out')}")
    return 0


def _evaluate_item(model, pattern, det_cfg, corpus, item, deg):
    cover = load_image(os.path.join(corpus, item["clean"]))
    protected = _protect_image(model, cover, pattern)
    h, w = protected.shape[:2]
    lmap = realize_location_map(pattern, h, w, channels=protected.shape[2])

    def flagged(img):
        received = degrade.apply(deg, img) if deg else img
        revealed, _ = reveal(model, received)
        return residual_mask(lmap, revealed, det_cfg)

    row = {
        "item": item["id"],
        "psnr_db": psnr(cover, protected),
        "ssim": ssim(cover, protected),
        "noise_pct": float(flagged(protected).bits.mean()),
    }
    ops = [op_from_manifest(rec) for rec in item.get("ops", [])]
    if ops:
        tampered, truth = apply_tamper(protected, ops)
        pred = flagged(tampered)
        scores = mask_scores(pred.bits, truth.bits)
        row["rmse"] = rmse_map(pred.bits.astype(float)[:, :, None],
                               truth.bits.astype(float)[:, :, None])
        row["iou"] = scores.iou
        row["f1"] = scores.f1
    return row


def cmd_evaluate(opt):
    manifest_path = os.path.join(opt.get("corpus"), "manifest.json")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"corpus manifest not found: {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    items = manifest.get("items", [])
    if not items:
        raise ValueError(f"corpus at {opt.get('corpus')} has no items")

    model = _load_checkpoint(opt.get("model"))
    pattern = _pattern(opt)
    det_cfg = _detection_config(opt)
    schedule = _schedule(opt.get("degrade", "") or "")
    deg = schedule[0] if schedule else None
    jobs = int(opt.get("jobs", os.cpu_count() or 1))

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        rows = list(pool.map(
            lambda it: _evaluate_item(model, pattern, det_cfg,
                                      opt.get("corpus"), it, deg),
            items))

    columns = ["item", "psnr_db", "ssim", "noise_pct"]
    if any("iou" in r for r in rows):
        columns += ["rmse", "iou", "f1"]
    out = opt.get("out")
    tmp = out + ".tmp"
    write_aggregate_csv(rows, columns, tmp)
    os.replace(tmp, out)
    print(f"evaluated {len(rows)} items -> {out}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "protect": cmd_protect,
    "tamper": cmd_tamper,
    "detect": cmd_detect,
    "analyze": cmd_analyze,
    "gen-corpus": cmd_gen_corpus,
    "evaluate": cmd_evaluate,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        opt = _Opts(args, args.config)
        return _COMMANDS[args.command](opt)
    except (VizmarkError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
