"""Within-host time scales: time to balance, non-effective excursions and escape from U.

The escape check uses a fixed g_N (default 10): with the default g_N the
host leaves U almost surely within host-time 10 at every desk-scale N.
"""

import argparse

from hostparasite.excursions import (BirthDeathSpec, balance_target, d_entry_count, escape_prob_exact,
                                     eta_escape_mc, excursion_length_mc, time_to_balance_mc, window_counts)
from hostparasite.params import ModelParams
from hostparasite.rng import seed_stream


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reps", type=int, default=2000)
    ap.add_argument("--escape-g", type=float, default=10.0)
    args = ap.parse_args()

    p = ModelParams(N=2000, M=1, eta=0.5, b=0.5, r=2.0, a=0.4, eps=0.2)
    spec = BirthDeathSpec.from_params(p)
    target = d_entry_count(p.N, p.b, p.a, p.eps1, p.eta)
    bound = p.N ** (p.b * (1 + p.a) + p.eps) / p.g_N
    st = time_to_balance_mc(spec, 1, target, args.reps, seed_stream(args.seed, 0), bound=bound)
    print(f"time to balance: P(success) = {st.probability:.4f}, below bound: {st.frac_below_bound:.4f}")

    ex = excursion_length_mc(spec, 20 * args.reps, seed_stream(args.seed, 1), bound=p.N ** (p.b + p.eps) / p.g_N)
    print(f"non-effective excursions below N^(b+eps)/g_N: {ex.frac_below_bound:.5f}")

    for i, N in enumerate((200, 500, 1000)):
        q = ModelParams(N=N, M=1, eta=0.5, b=0.5, r=2.0, g_N=args.escape_g)
        lo, hi = window_counts(q)
        s = BirthDeathSpec.from_params(q)
        start = balance_target(N, q.eta)
        mc = eta_escape_mc(s, start, (lo, hi), 10.0, args.reps, seed_stream(args.seed, 10 + i))
        print(f"N={N}: escape by t=10 exact {escape_prob_exact(s, start, lo, hi, 10.0):.4f}, "
              f"MC {mc.probability:.4f} +- {mc.std_error:.4f}")


if __name__ == "__main__":
    main()
