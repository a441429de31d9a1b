#!/usr/bin/env python3
"""Regenerate the frozen test-cipher keystream vectors.

This is an independent implementation of the published recurrence, written
without reference to the package internals (plain modular arithmetic, no bit
masks), so the committed vectors cross-check the production code rather than
restating it. Output: tests/data/test_cipher_vectors.json.
"""

import json
import os

TWO64 = 2 ** 64


def seed_state(key: bytes) -> int:
    s = 0
    for b in key:
        s = ((s * 0x100000001B3) % TWO64) ^ b
    return s


def keystream(key: bytes, length: int) -> bytes:
    s = seed_state(key)
    out = []
    for _ in range(length):
        s = (s * 6364136223846793005 + 1442695040888963407) % TWO64
        out.append((s // 2 ** 56) % 256)
    return bytes(out)


PAIRS = [
    ("0000000000000000", 4),
    ("0102030405060708", 16),
    ("ffffffffffffffff", 16),
    ("0102030405060708", 1),
    ("deadbeefcafebabe", 32),
    ("0000000000000001", 8),
    ("8000000000000000", 8),
    ("0123456789abcdef", 64),
    ("a5a5a5a5a5a5a5a5", 24),
    ("5c5c5c5c5c5c5c5c", 12),
]


def main() -> None:
    vectors = [
        {"key": key_hex, "length": length,
         "keystream": keystream(bytes.fromhex(key_hex), length).hex()}
        for key_hex, length in PAIRS
    ]
    out_path = os.path.join(os.path.dirname(__file__), "..", "tests", "data",
                            "test_cipher_vectors.json")
    out_path = os.path.normpath(out_path)
    os.makedirs(os.path.dirname(out_path), exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(vectors, fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(vectors)} vectors to {out_path}")


if __name__ == "__main__":
    main()
