"""How often the chord-distance gate accepts the bend of piecewise-linear loss curves.

    python scripts/elbow_sweep.py --ratios 2 3 5 10 --thresholds 0 0.02 0.05 0.1
"""

import argparse

from echoseg.pipeline import elbow_index


def curve(n, k, ratio):
    return [-i if i <= k else -k - (i - k) / ratio for i in range(n)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ratios", type=float, nargs="+", default=[2, 3, 5, 10])
    ap.add_argument("--thresholds", type=float, nargs="+", default=[0.0, 0.02, 0.05, 0.1])
    ap.add_argument("--n-max", type=int, default=50)
    args = ap.parse_args()

    cases = [(n, k) for n in range(5, args.n_max + 1) for k in range(2, n - 1)]
    print("ratio " + " ".join(f"t={t:<6}" for t in args.thresholds))
    for ratio in args.ratios:
        hits = []
        for t in args.thresholds:
            ok = 0
            for n, k in cases:
                got = elbow_index(curve(n, k, ratio), threshold=t)
                ok += got is not None and abs(got - k) <= 1
            hits.append(ok)
        print(f"{ratio:<5} " + " ".join(f"{h:>4}/{len(cases)}" for h in hits))


if __name__ == "__main__":
    main()
