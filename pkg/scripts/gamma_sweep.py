"""Regret of the impatience policy over batch sizes B = rate^-gamma (T = 10, Exp(1) patience)."""

import argparse

from batcholp.experiments import default_workers, gamma_sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--gammas", default="0.1,0.3,0.5,0.7")
    ap.add_argument("--rates", default="1000,10000")
    ap.add_argument("--horizon", type=float, default=10.0)
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/gamma_sweep.csv")
    args = ap.parse_args()
    gammas = [float(g) for g in args.gammas.split(",")]
    rates = [float(r) for r in args.rates.split(",")]
    res = gamma_sweep(gammas, rates, T=args.horizon, trials=args.trials, seed=args.seed,
                      workers=default_workers())
    res.to_csv(args.out)
    for cfg, est in zip(res.cells, res.estimates):
        print(f"rate {cfg.rate:8g} gamma {cfg.gamma:.1f} K {cfg.K:6d}  regret {est.mean:9.2f} +- {est.stderr:.2f}")


if __name__ == "__main__":
    main()
