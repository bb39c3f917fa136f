"""Riesz-map sweep on the n=3 Freudenthal cube: k in 0:2, p in 3:6, two levels."""

import argparse
from pathlib import Path

from derham.cli import RunConfig, run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/riesz.csv")
    ap.add_argument("--levels", type=int, nargs="+", default=[0, 1])
    ap.add_argument("--p", type=int, nargs="+", default=[3, 4, 5, 6])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    cfg = RunConfig("riesz", k=[0, 1, 2], p=args.p, n=3, levels=args.levels,
                    alpha=[1e3, 1.0, 1e-3], split=[True, False], seed=args.seed, out=args.out)
    rows = run(cfg)
    bad = [r for r in rows if not r["converged"]]
    print(f"{len(rows)} solves written to {args.out}; {len(bad)} did not converge")


if __name__ == "__main__":
    main()
