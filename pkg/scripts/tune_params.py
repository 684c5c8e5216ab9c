"""Grid-search solver parameters on training images and print the scoreboard.

Example:
    python scripts/tune_params.py --algorithm kl-nc --n-train 8 --out runs/tune
"""

import argparse
import json
import pathlib
import sys

from rotpsf.config import ExperimentConfig, TuneGrid
from rotpsf.experiment import tune


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--algorithm", default="kl-nc")
    parser.add_argument("--density", type=int, default=15)
    parser.add_argument("--n-train", type=int, default=20)
    parser.add_argument("--flux-mean", type=float, default=2000.0)
    parser.add_argument("--mu", type=float, nargs="+", default=None)
    parser.add_argument("--a", type=float, nargs="+", default=None)
    parser.add_argument("--beta", type=float, nargs="+", default=None)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out", default="runs/tune")
    args = parser.parse_args()

    grid = TuneGrid()
    grid_kwargs = {}
    for axis in ("mu", "a", "beta"):
        values = getattr(args, axis)
        grid_kwargs[axis] = tuple(values) if values else getattr(grid, axis)
    xcfg = ExperimentConfig(n_train=args.n_train, flux_mean=args.flux_mean,
                            tune_grid=TuneGrid(**grid_kwargs))
    best, scoreboard = tune(xcfg, args.algorithm, density=args.density,
                            workers=args.threads)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scoreboard.json").write_text(json.dumps(scoreboard, indent=2))
    for row in sorted(scoreboard, key=lambda r: -r["f1"]):
        print(f"mu={row['mu']:<8g} a={row['a']:<6g} beta={row['beta']:<6g} f1={row['f1']:.4f}")
    print(f"best: mu={best.mu} a={best.a} beta0={best.beta0} beta1={best.beta1}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
