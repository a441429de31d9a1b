#!/usr/bin/env python3
"""Exact vs asymptotic central-binomial bits across deck sizes.

Prints one row per n (2n cards drawn): exact log2 C(2n,n), the asymptotic
value 2n - log2(pi*n)/2, and the relative error between them.
"""

import argparse

from splitvault.keygen_audit import (
    asymptotic_central_binomial_log2,
    exact_central_binomial_log2,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--min-n", type=int, default=1)
    parser.add_argument("--max-n", type=int, default=100)
    args = parser.parse_args()

    print(f"{'n':>4} {'cards':>6} {'exact':>12} {'asymptotic':>12} {'rel.err':>10}")
    worst = 0.0
    for n in range(args.min_n, args.max_n + 1):
        exact = exact_central_binomial_log2(n)
        asym = asymptotic_central_binomial_log2(n)
        rel = abs(exact - asym) / exact
        worst = max(worst, rel)
        print(f"{n:>4} {2 * n:>6} {exact:>12.4f} {asym:>12.4f} {rel:>10.2e}")
    print(f"worst relative error: {worst:.2e}")


if __name__ == "__main__":
    main()
