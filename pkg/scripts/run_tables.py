"""Run table presets and print regret next to the published values.

    python scripts/run_tables.py --scale desk --trials 1000
    python scripts/run_tables.py table1 table3 --last-batch integral
"""

import argparse
import time
from pathlib import Path

from batcholp.experiments import PRESETS, default_workers, run_table

PUBLISHED = {
    "table1": (2.26, 14.47, 19.90, 22.25, 24.74),
    "table2": (65.39, 109.40, 118.86, 120.83, 121.75),
    "table3": (3.75, 25.60, 35.83, 39.88, 45.93, 48.22),
    "table4": (3.68, 14.11, 23.46, 28.01, 32.49, 35.09),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("presets", nargs="*", default=sorted(PRESETS))
    ap.add_argument("--scale", default="desk", choices=("desk", "full"))
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--last-batch", default=None, choices=("integral", "fractional"))
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    workers = args.workers or default_workers()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for preset in args.presets:
        start = time.time()
        res = run_table(preset, args.scale, args.trials, args.seed, workers, last_batch=args.last_batch)
        mode = args.last_batch or PRESETS[preset].last_batch
        res.to_csv(out / f"{preset}_{args.scale}_{mode}.csv")
        print(f"{preset} ({mode} last batch, {time.time() - start:.0f}s)")
        first = [c for c in res.cells if (c.n, c.rate, c.horizon) == (res.cells[0].n, res.cells[0].rate,
                                                                        res.cells[0].horizon)]
        for cfg, est in zip(res.cells, res.estimates):
            ref = ""
            if cfg in first:
                ref = f"  published {PUBLISHED[preset][first.index(cfg)]:.2f}"
            print(f"  {cfg.label():40s} {est.mean:8.2f} +- {est.stderr:.2f}{ref}")


if __name__ == "__main__":
    main()
