"""Two-part key splitting.

A key of L bytes is split into a uniformly random mask and the byte-wise XOR
of key and mask. Either half alone is uniform over all L-byte strings, so it
carries no information about the key; XOR of both halves restores it. This is
the 2-of-2 case of secret sharing with zero size overhead.
"""

from dataclasses import dataclass

from .errors import InvalidParameters, LengthMismatch, ZeroizedMaterial
from .randomness import RandomSource, default_random, draw_bytes


def xor_bytes(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise LengthMismatch(f"xor of unequal lengths: {len(a)} vs {len(b)}")
    return bytes(x ^ y for x, y in zip(a, b))


class KeyMaterial:
    """Fixed-length secret byte string with zeroize-on-destroy semantics.

    The backing buffer is overwritten with 0x00 on zeroize; after that every
    operation raises ZeroizedMaterial. Zeroization of copies that escaped as
    immutable ``bytes`` is best effort only (CPython does not let us scrub
    them), which is why accessors hand out copies and never the buffer itself.
    """

    __slots__ = ("_buf", "_zeroized")

    def __init__(self, data) -> None:
        if len(data) < 1:
            raise InvalidParameters("key material must be at least 1 byte")
        self._buf = bytearray(data)
        self._zeroized = False

    @classmethod
    def random(cls, length: int, source: RandomSource = default_random) -> "KeyMaterial":
        if length < 1:
            raise InvalidParameters("key material must be at least 1 byte")
        return cls(draw_bytes(source, length))

    @property
    def length(self) -> int:
        return len(self._buf)

    @property
    def zeroized(self) -> bool:
        return self._zeroized

    @property
    def bytes(self) -> bytes:
        if self._zeroized:
            raise ZeroizedMaterial("key material has been destroyed")
        return bytes(self._buf)

    def zeroize(self) -> None:
        # Idempotent: zeroizing twice is harmless, using the value afterwards is not.
        for i in range(len(self._buf)):
            self._buf[i] = 0
        self._zeroized = True

    def __len__(self) -> int:
        return len(self._buf)

    def __repr__(self) -> str:  # never leak content
        state = "zeroized" if self._zeroized else "live"
        return f"KeyMaterial(length={len(self._buf)}, {state})"

    def __del__(self):
        try:
            self.zeroize()
        except Exception:
            pass


@dataclass
class SplitPair:
    half_a: KeyMaterial
    half_b: KeyMaterial


def split(key: KeyMaterial, source: RandomSource = default_random) -> SplitPair:
    """Split a key into a random mask (half_a) and key XOR mask (half_b)."""
    material = key.bytes  # raises ZeroizedMaterial on destroyed input
    mask = draw_bytes(source, key.length)
    return SplitPair(half_a=KeyMaterial(mask), half_b=KeyMaterial(xor_bytes(material, mask)))


def combine(half_a: KeyMaterial, half_b: KeyMaterial) -> KeyMaterial:
    """Restore the key from both halves (byte-wise XOR)."""
    a = half_a.bytes
    b = half_b.bytes
    if len(a) != len(b):
        raise LengthMismatch(f"halves differ in length: {len(a)} vs {len(b)}")
    return KeyMaterial(xor_bytes(a, b))
