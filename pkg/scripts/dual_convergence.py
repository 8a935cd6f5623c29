"""Mean squared error of sample dual prices against the population price, and its log-log slope."""

import argparse

from batcholp.experiments import dual_convergence_study
from batcholp.market import uniform_market


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--d", type=float, default=5.0)
    ap.add_argument("--sizes", default="100,400,1600,6400")
    ap.add_argument("--replications", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=9)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    st = dual_convergence_study(uniform_market(1), args.d, sizes, args.replications, args.seed)
    print(f"population price {st.population_price:.12f}")
    for n, mse in zip(st.sizes, st.mean_squared_error):
        print(f"  N = {n:6d}  MSE {mse:.3e}")
    print(f"slope {st.slope}")


if __name__ == "__main__":
    main()
