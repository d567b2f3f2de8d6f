"""Exact probability to reach balance against its small-selection asymptote."""

import argparse

from hostparasite.excursions import probability_csv, probability_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--b", type=float, default=0.55)
    ap.add_argument("--Ns", type=int, nargs="+", default=[10**3, 10**4, 10**5])
    ap.add_argument("--etas", type=float, nargs="+", default=[0.4, 0.5, 0.7])
    args = ap.parse_args()
    rows = probability_sweep(args.Ns, args.b, args.etas)
    print(probability_csv(rows, {"b": args.b}), end="")


if __name__ == "__main__":
    main()
