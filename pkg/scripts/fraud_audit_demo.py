#!/usr/bin/env python3
"""Demonstrate the birthday-collision audit on two generators.

Scenario: a generator advertised as having a 2^16 keyspace actually draws
from 2^8 distinct keys. 512 samples produce hundreds of colliding pairs where
the claim predicts about two, and the audit flags it. An honest CSPRNG with a
2^64 claim shows no collisions and passes.
"""

import argparse
import hashlib
import random

from splitvault.keygen_audit import collision_audit


def cheating_generator(seed: int, true_bits: int = 8, key_len: int = 8):
    rng = random.Random(seed)

    def gen() -> bytes:
        v = rng.randrange(2 ** true_bits)
        return hashlib.sha256(v.to_bytes(4, "big")).digest()[:key_len]

    return gen


def honest_generator(seed: int, key_len: int = 8):
    rng = random.Random(seed)
    return lambda: rng.randbytes(key_len)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--samples", type=int, default=512)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    print("== advertised 2^16, actual 2^8 ==")
    report = collision_audit(cheating_generator(args.seed), 16.0, args.samples)
    for line in report.lines():
        print("  " + line)

    print("== honest CSPRNG, claimed 2^64 ==")
    report = collision_audit(honest_generator(args.seed), 64.0, args.samples)
    for line in report.lines():
        print("  " + line)


if __name__ == "__main__":
    main()
