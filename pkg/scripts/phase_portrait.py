"""Emit the mean-field vector field on the (v0, v1) simplex as CSV."""

import argparse

from hostparasite.meanfield import classify_equilibria, phase_portrait_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eta", type=float, default=0.5)
    ap.add_argument("--r", type=float, default=2.0)
    ap.add_argument("--n", type=int, default=21)
    args = ap.parse_args()
    print("#", classify_equilibria(args.eta, args.r).label())
    print(phase_portrait_csv(args.eta, args.r, args.n, {"eta": args.eta, "r": args.r}), end="")


if __name__ == "__main__":
    main()
