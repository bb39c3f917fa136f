"""Reference-cell studies: interior conditioning for p in 1:8 and decoupling constants for p in 4:10."""

import argparse
from pathlib import Path

from derham.cli import RunConfig, run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outdir", default="results")
    args = ap.parse_args()
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    run(RunConfig("conditioning", k=[0, 1, 2, 3], p=list(range(1, 9)), out=str(out / "conditioning.csv")))
    rows = run(RunConfig("decoupling", k=[1, 2], p=list(range(4, 11)), out=str(out / "decoupling.csv")))
    for r in rows:
        if r.get("slope") is not None:
            print(f"k={r['k']}: omega ~ p^{r['slope']:.2f}")


if __name__ == "__main__":
    main()
