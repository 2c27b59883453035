"""Batch evaluation over a synthetic tampered corpus.

Generates a small corpus (each item = chart + scripted tamper + truth
mask), protects every chart, replays the recorded tamper ops on the
protected copy, and scores detection against the exact truth masks. Also
runs the same items through a jpeg-90 channel to show the semi-fragile
split: benign recompression stays quiet, the tamper keeps firing.

Reuses the checkpoint from protect_detect_roundtrip.py when it finds one,
otherwise trains its own. Writes a per-item CSV with mean and ci95 rows.
"""

import argparse
import os

import numpy as np

from vizmark import degrade
from vizmark.chartgen import apply_tamper, gen_corpus
from vizmark.degrade import Degradation
from vizmark.detect import DetectionConfig, residual_mask
from vizmark.inn import DEFAULT_MAP_PATTERN, embed, load_model, realize_location_map, reveal
from vizmark.metrics import mask_scores, psnr, ssim, write_aggregate_csv

HERE = os.path.dirname(os.path.abspath(__file__))
COLUMNS = ["item", "psnr_db", "ssim", "noise_pct", "iou", "f1",
           "noise_jpeg_pct", "iou_jpeg"]


def get_model(out_dir, iterations):
    reuse = os.path.join(HERE, "out", "roundtrip", "demo.vzmk")
    if os.path.exists(reuse):
        print(f"reusing checkpoint {reuse}")
        return load_model(reuse)
    print("no roundtrip checkpoint found, training one here")
    from protect_detect_roundtrip import train_demo_model
    model, _ = train_demo_model(out_dir, iterations)
    return model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--iterations", type=int, default=1000)
    ap.add_argument("--out", default=os.path.join(HERE, "out", "evaluation"))
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    model = get_model(args.out, args.iterations)
    items, _manifest = gen_corpus(args.n, seed=args.seed,
                                  root=os.path.join(args.out, "corpus"))

    lmap = realize_location_map(DEFAULT_MAP_PATTERN, 64, 64, channels=3)
    det = DetectionConfig(tau=0.2, morphology="open-close")
    jpeg = Degradation("jpeg", quality=90)

    def score(received, truth):
        revealed, _ = reveal(model, received)
        return mask_scores(residual_mask(lmap, revealed, det).bits, truth)

    rows = []
    for idx, item in enumerate(items):
        protected = embed(model, item.clean, lmap)
        tampered, truth = apply_tamper(protected, item.ops)
        clean = score(protected, np.zeros((64, 64), dtype=bool))
        hit = score(tampered, truth.bits)
        hit_j = score(degrade.apply(jpeg, tampered), truth.bits)
        rows.append({
            "item": f"{idx:04d}",
            "psnr_db": psnr(item.clean, protected),
            "ssim": ssim(item.clean, protected),
            "noise_pct": clean.noise_percentage * 100.0,
            "iou": hit.iou,
            "f1": hit.f1,
            "noise_jpeg_pct":
                score(degrade.apply(jpeg, protected),
                      np.zeros((64, 64), dtype=bool)).noise_percentage * 100.0,
            "iou_jpeg": hit_j.iou,
        })
        print(f"{rows[-1]['item']}: psnr={rows[-1]['psnr_db']:.2f} "
              f"iou={rows[-1]['iou']:.3f} iou_jpeg={rows[-1]['iou_jpeg']:.3f}")

    csv_path = os.path.join(args.out, "scores.csv")
    write_aggregate_csv(rows, COLUMNS, csv_path)
    print(f"wrote {csv_path}")
    for key in ("psnr_db", "noise_pct", "iou", "iou_jpeg"):
        vals = [r[key] for r in rows]
        print(f"  mean {key}: {np.mean(vals):.4f}")


if __name__ == "__main__":
    main()
