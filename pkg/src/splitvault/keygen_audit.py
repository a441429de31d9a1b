"""Manual key generation from card-deck transcripts, entropy accounting,
and a birthday-collision audit for key generators.

A shuffled 52-card deck with one or two cards thrown out yields 50 or 51
red/black draws, transcribed red->0, black->1. One balanced pass of 2n cards
has C(2n, n) possible color sequences, and C(2n, n) ~ 4^n / sqrt(pi*n), so a
pass of 50 cards carries ~46.8 bits and four passes combined clear 187 bits.
The audit side addresses the opposite risk: a generator advertising a large
keyspace but drawing from a small one produces birthday collisions far in
excess of the advertised rate, which a modest sample detects.
"""

import enum
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

from .errors import (
    EmptyInput,
    GeneratorFailure,
    InsufficientEntropy,
    InvalidDeck,
    InvalidParameters,
    MalformedPass,
)
from .randomness import RandomSource, default_random, draw_bytes
from .secret_split import KeyMaterial

RED = "red"
BLACK = "black"

DECK_SIZE = 52


@dataclass(frozen=True)
class CardPass:
    """One pass through a shuffled deck with 1 or 2 cards thrown out."""

    colors: tuple

    def __post_init__(self):
        if not all(c in (RED, BLACK) for c in self.colors):
            bad = sorted({c for c in self.colors if c not in (RED, BLACK)})
            raise MalformedPass(f"colors must be 'red'/'black', got {bad}")
        if self.discarded not in (1, 2):
            raise MalformedPass(
                f"a pass draws {DECK_SIZE - 2} or {DECK_SIZE - 1} cards, got {len(self.colors)}"
            )

    @property
    def deck_size(self) -> int:
        return DECK_SIZE

    @property
    def discarded(self) -> int:
        return DECK_SIZE - len(self.colors)


def pass_to_bits(card_pass: CardPass) -> str:
    """Transcribe draw order to bits: red -> '0', black -> '1'."""
    if not isinstance(card_pass, CardPass):
        raise MalformedPass(f"expected a CardPass, got {type(card_pass).__name__}")
    return "".join("0" if c == RED else "1" for c in card_pass.colors)


def parse_transcript(text: str) -> List[CardPass]:
    """Parse a transcript file: one pass per line, characters 'r'/'b'."""
    passes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        colors = []
        for ch in line:
            if ch == "r":
                colors.append(RED)
            elif ch == "b":
                colors.append(BLACK)
            else:
                raise MalformedPass(f"line {lineno}: unexpected character {ch!r}")
        passes.append(CardPass(tuple(colors)))
    return passes


@dataclass
class CombinedKey:
    material: KeyMaterial
    bit_length: int
    pad_bits: int  # zero bits appended to reach a whole byte; recorded, not secret


def pack_bits(bits: str) -> CombinedKey:
    if any(b not in "01" for b in bits):
        raise MalformedPass("bit strings may only contain '0' and '1'")
    pad = (-len(bits)) % 8
    padded = bits + "0" * pad
    data = bytes(int(padded[i:i + 8], 2) for i in range(0, len(padded), 8))
    return CombinedKey(material=KeyMaterial(data), bit_length=len(bits), pad_bits=pad)


def combine_passes(passes: Sequence[str]) -> CombinedKey:
    """Concatenate pass bit-strings in order and pack MSB-first into bytes."""
    if not passes:
        raise EmptyInput("no passes to combine")
    return pack_bits("".join(passes))


# -- entropy accounting -----------------------------------------------------------

@dataclass
class EntropyReport:
    deck_size: int           # cards actually drawn (2n)
    discarded: int
    passes: int
    exact_log2: float        # log2 C(2n, n), per pass
    asymptotic_log2: float   # 2n - log2(pi*n)/2, per pass
    combined_log2: float     # passes * exact
    combined_asymptotic_log2: float
    composition_log2: Optional[float] = None  # refined count over reachable compositions


def exact_central_binomial_log2(n: int) -> float:
    """log2 of C(2n, n) from the exact big-integer value."""
    return math.log2(math.comb(2 * n, n))


def asymptotic_central_binomial_log2(n: int) -> float:
    """log2 of 4^n / sqrt(pi*n)."""
    return 2 * n - 0.5 * math.log2(math.pi * n)


def entropy_estimate(deck_size: int, discarded: int = 0, passes: int = 1) -> EntropyReport:
    """Exact and asymptotic per-pass bits, combined over `passes` in log space."""
    if deck_size % 2 != 0 or not 2 <= deck_size <= 200:
        raise InvalidDeck(f"deck_size must be even and in [2, 200], got {deck_size}")
    if discarded not in (0, 1, 2):
        raise InvalidDeck(f"discarded must be 0, 1 or 2, got {discarded}")
    if passes < 1:
        raise InvalidDeck(f"passes must be >= 1, got {passes}")
    n = deck_size // 2
    exact = exact_central_binomial_log2(n)
    asymptotic = asymptotic_central_binomial_log2(n)
    # Refinement: discarding perturbs the red/black composition of the drawn
    # cards; count every sequence reachable from a balanced physical deck of
    # deck_size + discarded cards. Undefined when that physical deck is odd.
    composition = None
    physical = deck_size + discarded
    if physical % 2 == 0:
        half = physical // 2
        reachable = sum(math.comb(deck_size, half - r) for r in range(discarded + 1))
        composition = math.log2(reachable)
    return EntropyReport(
        deck_size=deck_size,
        discarded=discarded,
        passes=passes,
        exact_log2=exact,
        asymptotic_log2=asymptotic,
        combined_log2=passes * exact,
        combined_asymptotic_log2=passes * asymptotic,
        composition_log2=composition,
    )


# -- collision audit ------------------------------------------------------------------

class Verdict(str, enum.Enum):
    CONSISTENT = "consistent"
    FRAUD_SUSPECTED = "fraud_suspected"
    INCONCLUSIVE = "inconclusive"


@dataclass
class AuditReport:
    samples: int
    claimed_log2_space: float
    key_length: int
    observed_pairs: int        # sum over values of C(count, 2)
    duplicate_values: int      # distinct values seen more than once
    expected_pairs_claimed: float
    p_any_collision_claimed: float  # 1 - exp(-N(N-1)/2^(c+1))
    p_value: float             # P[pairs >= observed | claim]
    fitted_log2_space: Optional[float]
    threshold: float
    verdict: Verdict

    def lines(self) -> List[str]:
        out = [
            f"samples: {self.samples}",
            f"claimed keyspace: 2^{self.claimed_log2_space:g}",
            f"observed colliding pairs: {self.observed_pairs} "
            f"({self.duplicate_values} duplicated values)",
            f"expected pairs under claim: {self.expected_pairs_claimed:.6g}",
            f"p(any collision | claim): {self.p_any_collision_claimed:.6g}",
            f"p-value of observation: {self.p_value:.6g}",
        ]
        if self.fitted_log2_space is not None:
            out.append(f"fitted keyspace from collisions: 2^{self.fitted_log2_space:.2f}")
        out.append(f"verdict: {self.verdict.value}")
        return out


def _poisson_tail(k: int, lam: float) -> float:
    """P[X >= k] for X ~ Poisson(lam)."""
    if k <= 0:
        return 1.0
    if lam <= 0.0:
        return 0.0
    if lam > 1000.0:
        # normal approximation with continuity correction
        return 0.5 * math.erfc((k - 0.5 - lam) / math.sqrt(2.0 * lam))
    # exact upper sum in log space, stopping once terms stop mattering
    total = 0.0
    i = k
    while True:
        log_term = -lam + i * math.log(lam) - math.lgamma(i + 1)
        term = math.exp(log_term)
        total += term
        if i > lam and (term < 1e-18 or (total > 0 and term / total < 1e-15)):
            break
        i += 1
        if i > k + 100000:
            break
    return min(total, 1.0)


def collision_audit(
    generator: Callable[[], bytes],
    claimed_log2_space: float,
    samples: int,
    threshold: float = 1e-6,
) -> AuditReport:
    """Draw keys, count exact duplicates, and compare with the claimed keyspace.

    The verdict is FRAUD_SUSPECTED when the observed colliding-pair count is
    statistically incompatible with the claim (Poisson tail below the
    threshold). Fewer than two samples can say nothing.
    """
    if samples < 0:
        raise InvalidParameters("samples must be non-negative")
    keys: List[bytes] = []
    key_length = None
    for _ in range(samples):
        try:
            key = bytes(generator())
        except Exception as exc:
            raise GeneratorFailure(f"generator raised: {exc}") from exc
        if key_length is None:
            key_length = len(key)
        elif len(key) != key_length:
            raise GeneratorFailure(
                f"generator changed key length: {key_length} then {len(key)}"
            )
        keys.append(key)

    counts = Counter(keys)
    observed_pairs = sum(c * (c - 1) // 2 for c in counts.values())
    duplicate_values = sum(1 for c in counts.values() if c > 1)

    n = samples
    total_pairs = n * (n - 1) // 2
    log_lam = math.log(total_pairs) - claimed_log2_space * math.log(2.0) if total_pairs else -math.inf
    expected = math.exp(log_lam) if log_lam > -700 else 0.0
    p_any = -math.expm1(-expected)

    if n < 2:
        verdict = Verdict.INCONCLUSIVE
        p_value = 1.0
    elif observed_pairs == 0:
        verdict = Verdict.CONSISTENT
        p_value = 1.0
    else:
        p_value = _poisson_tail(observed_pairs, expected)
        verdict = Verdict.FRAUD_SUSPECTED if p_value < threshold else Verdict.CONSISTENT

    fitted = None
    if observed_pairs > 0 and total_pairs > 0:
        fitted = math.log2(total_pairs / observed_pairs)

    return AuditReport(
        samples=samples,
        claimed_log2_space=claimed_log2_space,
        key_length=key_length or 0,
        observed_pairs=observed_pairs,
        duplicate_values=duplicate_values,
        expected_pairs_claimed=expected,
        p_any_collision_claimed=p_any,
        p_value=p_value,
        fitted_log2_space=fitted,
        threshold=threshold,
        verdict=verdict,
    )


# -- key generation front door -----------------------------------------------------------

METHOD_CSPRNG = "csprng"
METHOD_CARD_TRANSCRIPT = "card_transcript"


def generate_key(method: str, length_bits: int, source=None) -> CombinedKey:
    """Produce key material of `length_bits` bits.

    csprng: source is a random byte source (defaults to the OS CSPRNG);
    length must be a whole number of bytes. card_transcript: source is a
    list of CardPass records; the transcript must supply at least
    length_bits bits and is truncated to exactly that many.
    """
    if length_bits < 1:
        raise InvalidParameters("length_bits must be >= 1")
    if method == METHOD_CSPRNG:
        if length_bits % 8 != 0:
            raise InvalidParameters("csprng keys must be a whole number of bytes")
        rng: RandomSource = source or default_random
        data = draw_bytes(rng, length_bits // 8)
        return CombinedKey(material=KeyMaterial(data), bit_length=length_bits, pad_bits=0)
    if method == METHOD_CARD_TRANSCRIPT:
        if not source:
            raise InsufficientEntropy("no card passes supplied")
        bits = "".join(pass_to_bits(p) for p in source)
        if len(bits) < length_bits:
            raise InsufficientEntropy(
                f"transcript supplies {len(bits)} bits, {length_bits} requested"
            )
        return pack_bits(bits[:length_bits])
    raise InvalidParameters(f"unknown method {method!r}")
