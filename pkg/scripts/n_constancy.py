"""Regret of the known-horizon policy at fixed K across n (flat in n)."""

import argparse
import math

from batcholp.experiments import ExperimentConfig, default_workers, evaluate_grid
from batcholp.market import uniform_market


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--K", type=int, default=8)
    ap.add_argument("--ns", default="1280,6400,12800,32000")
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--last-batch", default="fractional")
    args = ap.parse_args()
    cells = [ExperimentConfig("alg1", uniform_market(1), args.K, n=int(n), trials=args.trials,
                              last_batch=args.last_batch) for n in args.ns.split(",")]
    ests = evaluate_grid(cells, default_workers())
    for c, e in zip(cells, ests):
        print(f"n = {c.n:7d}  regret {e.mean:7.2f} +- {e.stderr:.2f}")
    a, b = ests[0], ests[-1]
    print(f"first vs last gap {abs(a.mean - b.mean):.2f}, pooled SE {math.hypot(a.stderr, b.stderr):.2f}")


if __name__ == "__main__":
    main()
