"""Patch-factor storage and per-iteration flops against p, split and unsplit."""

import argparse
from pathlib import Path

from derham.cli import RunConfig, run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/complexity.csv")
    ap.add_argument("--pmin", type=int, default=4)
    ap.add_argument("--pmax", type=int, default=7)
    args = ap.parse_args()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    cfg = RunConfig("complexity", k=[0, 1, 2], p=list(range(args.pmin, args.pmax + 1)), n=3,
                    split=[True, False], out=args.out)
    for r in run(cfg):
        if "nnz_exponent" in r:
            print(f"k={r['k']} split={r['split']}: nnz ~ p^{r['nnz_exponent']:.2f}, "
                  f"flops/iteration ~ p^{r['flops_exponent']:.2f}")


if __name__ == "__main__":
    main()
