"""The two-agent intent pipeline, step by step, with the offline mock.

Once detection has drawn boxes on a chart, the question becomes "so what
was the forger trying to do". That is handled by two model calls: a
refinement pass that snaps coarse detection regions to chart components,
and an intent pass that must pick its method label from a fixed
component-to-method rule table rather than free-associating.

This demo runs entirely offline against the deterministic geometric mock,
prints both prompts and both raw responses, and shows the validated
report. Point --endpoint at a real completion server (token via the
VIZMARK_API_TOKEN environment variable) to run it against an actual
model; everything else stays the same.
"""

import argparse
import json
import os

from vizmark.chartgen import gen_corpus
from vizmark.detect import DetectionConfig, extract_regions
from vizmark.intent import (
    ComponentLabel,
    HttpBackend,
    analyze,
    mock_backend,
    rule_lookup,
)

HERE = os.path.dirname(os.path.abspath(__file__))


class ChattyBackend:
    """Wraps a backend and prints every exchange as it happens."""

    def __init__(self, inner):
        self.inner = inner
        self.n = 0

    def complete(self, images, prompt):
        self.n += 1
        print(f"\n--- call {self.n}: prompt " + "-" * 40)
        print(prompt[:600] + ("\n[... truncated ...]" if len(prompt) > 600 else ""))
        out = self.inner.complete(images, prompt)
        print(f"--- call {self.n}: response " + "-" * 38)
        print(out)
        return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--endpoint", default=None,
                    help="HTTP completion endpoint; default uses the mock")
    ap.add_argument("--item", type=int, default=3, help="corpus item to analyze")
    args = ap.parse_args()

    # --- 1. the rule table the second agent is confined to --------------
    print("component -> allowed methods")
    for comp in ComponentLabel:
        rule = rule_lookup(comp)
        names = ", ".join(m.name for m in rule.reachable)
        print(f"  {comp.value:12s} {names}")

    # --- 2. a tampered chart with known ground truth ---------------------
    items, manifest = gen_corpus(args.item + 1, seed=5)
    item = items[args.item]
    meta = manifest["items"][args.item]
    print(f"\nitem {meta['id']}: {meta['chart_kind']} chart, "
          f"op={meta['ops'][0]['kind']} on {meta['ops'][0]['component']}")
    print(f"scripted intent: {meta['ops'][0]['intent']!r}")

    # detection regions straight from the truth mask; in production these
    # come from residual_mask + extract_regions on a protected image
    regions = extract_regions(item.truth_mask, DetectionConfig(min_area=1))
    print(f"{len(regions)} detection region(s): "
          + "; ".join(f"bbox={r.bbox} area={r.area}" for r in regions))

    # --- 3. two calls through the pipeline ------------------------------
    if args.endpoint:
        backend = HttpBackend(args.endpoint)
    else:
        backend = mock_backend()
    report = analyze(ChattyBackend(backend), item.tampered, regions)

    # --- 4. the validated, rule-checked report ---------------------------
    print("\nfinal report")
    print(json.dumps(report.to_json_obj(), indent=2))
    for entry in report.entries:
        tag = "conformant" if entry.conformant else "NON-CONFORMANT"
        print(f"  {entry.method.name}: {tag}")


if __name__ == "__main__":
    main()
