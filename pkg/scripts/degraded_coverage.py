"""Accepted-label coverage per self-learning round as the share of degraded frames grows.

    python scripts/degraded_coverage.py --studies 20 --fractions 0 0.15 0.3 0.5 --rounds 3
"""

import argparse

from _phantoms import build_store
from echoseg.pipeline import PipelineConfig, run_view_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--studies", type=int, default=20)
    ap.add_argument("--view", default="A2C", choices=["A2C", "SAX"])
    ap.add_argument("--fractions", type=float, nargs="+", default=[0.0, 0.15, 0.3, 0.5])
    ap.add_argument("--rounds", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    for frac in args.fractions:
        store, _ = build_store(args.studies, 2, args.seed, views=(args.view,), degraded_fraction=frac,
                               all_train=True)
        res = run_view_pipeline(args.view, store, PipelineConfig(rounds=args.rounds))
        steps = ", ".join(f"{s} {len(v)}" for s, v in res.steps.items())
        print(f"degraded {frac:.2f}: {len(store.keys(args.view))} frames; {steps}")


if __name__ == "__main__":
    main()
