"""Mean Dice against phantom truth after every pipeline step, per view and chamber.

    python scripts/stepwise_dice.py --studies 50 --frames 2 --out results/stepwise.json
"""

import argparse
import json
import time

import numpy as np

from _phantoms import build_store
from echoseg.labels import VIEW_CHAMBERS, Chamber
from echoseg.pipeline import run_view_pipeline
from echoseg.stats import dice


def mean_dice(labels, truth, keys, chamber):
    # a frame without a label scores 0
    return float(np.mean([dice(labels[k] == chamber, truth[k] == chamber) if k in labels else 0.0 for k in keys]))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--studies", type=int, default=50)
    ap.add_argument("--frames", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="optional JSON output")
    args = ap.parse_args()

    t0 = time.perf_counter()
    store, truth = build_store(args.studies, args.frames, args.seed)
    table, model = {}, None
    for view in ("A2C", "A4C", "SAX"):
        res = run_view_pipeline(view, store, a2c_model=model)
        if view == "A2C":
            model = res.model
        keys = [k for k in store.keys(view) if store.records[k].split != "test"]
        chambers = VIEW_CHAMBERS[view] + ((Chamber.MYO,) if view == "SAX" else ())
        table[view] = {step: {"coverage": len(labels), **{ch.name: mean_dice(labels, truth, keys, ch)
                                                           for ch in chambers}}
                       for step, labels in res.steps.items()}
        for step, row in table[view].items():
            cells = "  ".join(f"{k} {v:.3f}" for k, v in row.items() if k != "coverage")
            print(f"{view} {step:<3} n={row['coverage']:<4} {cells}")
    print(f"{time.perf_counter() - t0:.0f} s")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(table, fh, indent=2)


if __name__ == "__main__":
    main()
