"""Random byte sources.

A random source is any callable ``(n: int) -> bytes``. Operations that need
randomness accept one so tests can inject deterministic or budget-limited
sources; the default draws from the OS CSPRNG.
"""

import random
import secrets
from typing import Callable

from .errors import RandomnessExhausted

RandomSource = Callable[[int], bytes]


def default_random(n: int) -> bytes:
    return secrets.token_bytes(n)


def seeded_random(seed) -> RandomSource:
    """Deterministic source for tests and reproducible demos. Not for real keys."""
    rng = random.Random(seed)
    return lambda n: rng.randbytes(n)


def draw_bytes(source: RandomSource, n: int) -> bytes:
    """Pull exactly n bytes from a source, or raise RandomnessExhausted."""
    if n == 0:
        return b""
    try:
        out = source(n)
    except RandomnessExhausted:
        raise
    except Exception as exc:
        raise RandomnessExhausted(f"random source failed: {exc}") from exc
    out = bytes(out)
    if len(out) < n:
        raise RandomnessExhausted(f"requested {n} bytes, source supplied {len(out)}")
    return out[:n]
