"""Tag-length-value encoding used by the on-disk stores and export files.

Layout per field: tag u8, length u32 big-endian, value bytes.
"""

import struct
from typing import Iterator, Tuple

from .errors import CorruptStore

_HEADER = struct.Struct(">BI")


def encode(tag: int, value: bytes) -> bytes:
    if not 0 <= tag <= 0xFF:
        raise ValueError(f"tag out of range: {tag}")
    return _HEADER.pack(tag, len(value)) + value


def iter_fields(data: bytes) -> Iterator[Tuple[int, bytes]]:
    """Yield (tag, value) pairs; raise CorruptStore on truncation."""
    off = 0
    total = len(data)
    while off < total:
        if total - off < _HEADER.size:
            raise CorruptStore("truncated TLV header")
        tag, length = _HEADER.unpack_from(data, off)
        off += _HEADER.size
        if total - off < length:
            raise CorruptStore(f"truncated TLV value for tag 0x{tag:02x}")
        yield tag, bytes(data[off:off + length])
        off += length
