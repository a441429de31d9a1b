"""Pre-distributed one-time call keysets for employee pairs.

For nu employees and m sets per unordered pair, provisioning creates exactly
m*nu*(nu-1)/2 entries. Each entry's call key is split in two, the halves are
wrapped under fresh per-entry wrap keys, and the wrapped material is
cross-placed exactly like document keys: the phone keeps {wrap_key_b, s1},
the token keeps {wrap_key_a, s2}. A set is consumed when its call closes,
whether the call completed or the connection failed, and is never reusable.

The simplified variant skips splitting and wrapping: m plain one-time keys
per pair, phone-resident, same consumption rules. Use it when encrypted call
recordings do not need to stay protected at rest.

File tags (flat TLV; tag 0x10 starts a new entry):
    0x17 owner (u32 BE, file head)       0x16 mode (u8: 0 split, 1 simple)
    0x18 pending token delete (key id)   0x10 pair (u32 BE i, u32 BE j)
    0x11 index (u32 BE)                  0x12 wrap_key
    0x13 wrapped_half (ciphertext)       0x14 state (u8: 0 fresh, 1 consumed)
    0x15 call_key (simple mode)
"""

import hashlib
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import tlv
from .cipher_suite import CipherRegistry, CipherSpec, Ciphertext, default_registry
from .errors import (
    AlreadyConsumed,
    CorruptStore,
    InvalidParameters,
    MissingEntry,
    SessionClosed,
    TokenRecordMissing,
    TokenUnreachable,
)
from .randomness import RandomSource, default_random
from .secret_split import KeyMaterial, combine, split

TAG_PAIR = 0x10
TAG_INDEX = 0x11
TAG_WRAP_KEY = 0x12
TAG_WRAPPED_HALF = 0x13
TAG_STATE = 0x14
TAG_CALL_KEY = 0x15
TAG_MODE = 0x16
TAG_OWNER = 0x17
TAG_PENDING_DELETE = 0x18

STATE_FRESH = "fresh"
STATE_CONSUMED = "consumed"

MODE_SPLIT = "split"
MODE_SIMPLE = "simple"

# chunk direction within a call: 0 = lower employee id talking to higher, 1 = reverse
DIR_A_TO_B = 0
DIR_B_TO_A = 1

Pair = Tuple[int, int]


def normalize_pair(a: int, b: int) -> Pair:
    if a == b:
        raise InvalidParameters("a pair needs two distinct employees")
    return (a, b) if a < b else (b, a)


def keyset_key_id(pair: Pair, index: int) -> bytes:
    return f"ks/{pair[0]}-{pair[1]}/{index}".encode("ascii")


@dataclass
class KeysetPart:
    wrap_key: bytes
    wrapped_half: Ciphertext


@dataclass
class KeysetEntry:
    pair: Pair
    index: int
    phone_part: KeysetPart
    token_part: KeysetPart
    state: str = STATE_FRESH


@dataclass
class SimpleKeysetEntry:
    pair: Pair
    index: int
    call_key: bytes
    state: str = STATE_FRESH


# -- phone-side stores -----------------------------------------------------------

class _BaseStore:
    mode: str

    def __init__(self, owner: int, path: Optional[str] = None,
                 registry: Optional[CipherRegistry] = None) -> None:
        self.owner = owner
        self.path = path
        self.registry = registry
        self.pending_deletes: List[bytes] = []
        self._entries: Dict[Tuple[int, int, int], object] = {}

    def _key(self, pair: Pair, index: int):
        return (pair[0], pair[1], index)

    def entry(self, pair: Pair, index: int):
        return self._entries.get(self._key(pair, index))

    def require_fresh(self, pair: Pair, index: int):
        e = self.entry(pair, index)
        if e is None:
            raise MissingEntry(f"no keyset {index} for pair {pair}")
        if e.state != STATE_FRESH:
            raise AlreadyConsumed(f"keyset {index} for pair {pair} was already used")
        return e

    def indices(self, pair: Pair) -> List[int]:
        return sorted(t for (i, j, t) in self._entries if (i, j) == pair)

    def fresh_indices(self, pair: Pair) -> List[int]:
        return [t for t in self.indices(pair)
                if self._entries[(pair[0], pair[1], t)].state == STATE_FRESH]

    def next_fresh_index(self, pair: Pair) -> int:
        fresh = self.fresh_indices(pair)
        if not fresh:
            raise MissingEntry(f"all keysets for pair {pair} are consumed")
        return fresh[0]

    def pairs(self) -> List[Pair]:
        return sorted({(i, j) for (i, j, _) in self._entries})

    def mark_consumed(self, pair: Pair, index: int) -> None:
        e = self._entries[self._key(pair, index)]
        e.state = STATE_CONSUMED
        if self.path:
            self.save()

    def queue_delete(self, key_id: bytes) -> None:
        self.pending_deletes.append(key_id)
        if self.path:
            self.save()

    def flush_pending_deletes(self, token) -> int:
        """Retry queued token-side deletions; returns how many cleared."""
        cleared = 0
        remaining = []
        for key_id in self.pending_deletes:
            try:
                token.delete(key_id)
                cleared += 1
            except TokenRecordMissing:
                cleared += 1
            except TokenUnreachable:
                remaining.append(key_id)
        self.pending_deletes = remaining
        if cleared and self.path:
            self.save()
        return cleared

    def save(self, path: Optional[str] = None) -> None:
        path = path or self.path
        if path is None:
            raise InvalidParameters("store has no path")
        self.path = path
        blob = self._serialize()
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    def _header(self) -> bytes:
        mode = 0 if self.mode == MODE_SPLIT else 1
        out = tlv.encode(TAG_OWNER, struct.pack(">I", self.owner))
        out += tlv.encode(TAG_MODE, bytes([mode]))
        for key_id in self.pending_deletes:
            out += tlv.encode(TAG_PENDING_DELETE, key_id)
        return out


class PhoneKeysetStore(_BaseStore):
    mode = MODE_SPLIT

    def add(self, entry: KeysetEntry) -> None:
        self._entries[self._key(entry.pair, entry.index)] = entry

    def _serialize(self) -> bytes:
        out = self._header()
        for (i, j, t) in sorted(self._entries):
            e: KeysetEntry = self._entries[(i, j, t)]
            out += tlv.encode(TAG_PAIR, struct.pack(">II", i, j))
            out += tlv.encode(TAG_INDEX, struct.pack(">I", t))
            out += tlv.encode(TAG_WRAP_KEY, e.phone_part.wrap_key)
            out += tlv.encode(TAG_WRAPPED_HALF, e.phone_part.wrapped_half.to_bytes())
            out += tlv.encode(TAG_STATE, bytes([0 if e.state == STATE_FRESH else 1]))
        return out


class SimplePhoneStore(_BaseStore):
    mode = MODE_SIMPLE

    def add(self, entry: SimpleKeysetEntry) -> None:
        self._entries[self._key(entry.pair, entry.index)] = entry

    def _serialize(self) -> bytes:
        out = self._header()
        for (i, j, t) in sorted(self._entries):
            e: SimpleKeysetEntry = self._entries[(i, j, t)]
            out += tlv.encode(TAG_PAIR, struct.pack(">II", i, j))
            out += tlv.encode(TAG_INDEX, struct.pack(">I", t))
            out += tlv.encode(TAG_CALL_KEY, e.call_key)
            out += tlv.encode(TAG_STATE, bytes([0 if e.state == STATE_FRESH else 1]))
        return out


def load_phone_store(path: str, registry: Optional[CipherRegistry] = None):
    """Load a phone-side keyset store (split or simple) from its TLV file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    owner = None
    mode = MODE_SPLIT
    pending: List[bytes] = []
    rows: List[Dict[int, bytes]] = []
    current: Optional[Dict[int, bytes]] = None
    for tag, value in tlv.iter_fields(raw):
        if tag == TAG_OWNER:
            owner = struct.unpack(">I", value)[0]
        elif tag == TAG_MODE:
            mode = MODE_SPLIT if value == b"\x00" else MODE_SIMPLE
        elif tag == TAG_PENDING_DELETE:
            pending.append(value)
        elif tag == TAG_PAIR:
            current = {TAG_PAIR: value}
            rows.append(current)
        elif current is not None:
            current[tag] = value
        else:
            raise CorruptStore(f"entry field 0x{tag:02x} before any pair tag")
    if owner is None:
        raise CorruptStore("keyset store has no owner tag")
    store = (PhoneKeysetStore(owner, path, registry=registry) if mode == MODE_SPLIT
             else SimplePhoneStore(owner, path, registry=registry))
    store.pending_deletes = pending
    try:
        for row in rows:
            i, j = struct.unpack(">II", row[TAG_PAIR])
            index = struct.unpack(">I", row[TAG_INDEX])[0]
            state = STATE_CONSUMED if row.get(TAG_STATE, b"\x00") != b"\x00" else STATE_FRESH
            if mode == MODE_SPLIT:
                store.add(KeysetEntry(
                    pair=(i, j), index=index,
                    phone_part=KeysetPart(row[TAG_WRAP_KEY], Ciphertext.from_bytes(row[TAG_WRAPPED_HALF])),
                    token_part=None,  # token side lives on the token
                    state=state,
                ))
            else:
                store.add(SimpleKeysetEntry(pair=(i, j), index=index,
                                            call_key=row[TAG_CALL_KEY], state=state))
    except (KeyError, struct.error) as exc:
        raise CorruptStore(f"bad keyset entry: {exc}") from exc
    return store


# -- token-side exports -------------------------------------------------------------

def save_token_export(path: str, owner: int, records: List[Tuple[Pair, int, KeysetPart]]) -> None:
    out = tlv.encode(TAG_OWNER, struct.pack(">I", owner))
    for pair, index, part in records:
        out += tlv.encode(TAG_PAIR, struct.pack(">II", *pair))
        out += tlv.encode(TAG_INDEX, struct.pack(">I", index))
        out += tlv.encode(TAG_WRAP_KEY, part.wrap_key)
        out += tlv.encode(TAG_WRAPPED_HALF, part.wrapped_half.to_bytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(out)
    os.replace(tmp, path)


def load_token_export(path: str) -> List[Tuple[bytes, bytes]]:
    """Read a token export file into (key_id, blob) rows ready for PUT."""
    with open(path, "rb") as fh:
        raw = fh.read()
    rows: List[Tuple[bytes, bytes]] = []
    current: Optional[Dict[int, bytes]] = None

    def emit(row: Dict[int, bytes]) -> None:
        try:
            i, j = struct.unpack(">II", row[TAG_PAIR])
            index = struct.unpack(">I", row[TAG_INDEX])[0]
            blob = tlv.encode(TAG_WRAP_KEY, row[TAG_WRAP_KEY]) + tlv.encode(
                TAG_WRAPPED_HALF, row[TAG_WRAPPED_HALF])
        except (KeyError, struct.error) as exc:
            raise CorruptStore(f"bad token export entry: {exc}") from exc
        rows.append((keyset_key_id((i, j), index), blob))

    for tag, value in tlv.iter_fields(raw):
        if tag == TAG_OWNER:
            continue
        if tag == TAG_PAIR:
            if current is not None:
                emit(current)
            current = {TAG_PAIR: value}
        elif current is not None:
            current[tag] = value
        else:
            raise CorruptStore(f"entry field 0x{tag:02x} before any pair tag")
    if current is not None:
        emit(current)
    return rows


def push_token_export(token, rows: List[Tuple[bytes, bytes]]) -> int:
    for key_id, blob in rows:
        token.put(key_id, blob, overwrite=True)
    return len(rows)


def _token_blob(part: KeysetPart) -> bytes:
    return tlv.encode(TAG_WRAP_KEY, part.wrap_key) + tlv.encode(
        TAG_WRAPPED_HALF, part.wrapped_half.to_bytes())


def _parse_token_blob(blob: bytes) -> KeysetPart:
    try:
        fields = dict(tlv.iter_fields(blob))
        return KeysetPart(fields[TAG_WRAP_KEY], Ciphertext.from_bytes(fields[TAG_WRAPPED_HALF]))
    except (CorruptStore, KeyError) as exc:
        raise CorruptStore(f"malformed token keyset blob: {exc}") from exc


# -- provisioning ----------------------------------------------------------------------

@dataclass
class Distribution:
    nu: int
    m: int
    mode: str
    entries: list = field(default_factory=list)
    registry: Optional[CipherRegistry] = field(default=None, repr=False)

    @property
    def count(self) -> int:
        return len(self.entries)

    def phone_store(self, employee: int):
        if not 0 <= employee < self.nu:
            raise InvalidParameters(f"no employee {employee}")
        store = (PhoneKeysetStore(employee, registry=self.registry)
                 if self.mode == MODE_SPLIT
                 else SimplePhoneStore(employee, registry=self.registry))
        for e in self.entries:
            if employee in e.pair:
                if self.mode == MODE_SPLIT:
                    store.add(KeysetEntry(e.pair, e.index,
                                          KeysetPart(e.phone_part.wrap_key, e.phone_part.wrapped_half),
                                          None, e.state))
                else:
                    store.add(SimpleKeysetEntry(e.pair, e.index, e.call_key, e.state))
        return store

    def token_records(self, employee: int) -> List[Tuple[bytes, bytes]]:
        if self.mode != MODE_SPLIT:
            return []
        return [
            (keyset_key_id(e.pair, e.index), _token_blob(e.token_part))
            for e in self.entries
            if employee in e.pair
        ]

    def write_exports(self, directory: str) -> Dict[str, str]:
        """Write per-employee phone and token files; returns name -> path."""
        os.makedirs(directory, exist_ok=True)
        paths: Dict[str, str] = {}
        for e in range(self.nu):
            phone = self.phone_store(e)
            phone_path = os.path.join(directory, f"phone_{e}.tlv")
            phone.save(phone_path)
            paths[f"phone_{e}"] = phone_path
            if self.mode == MODE_SPLIT:
                token_path = os.path.join(directory, f"token_{e}.tlv")
                records = [(x.pair, x.index, x.token_part) for x in self.entries if e in x.pair]
                save_token_export(token_path, e, records)
                paths[f"token_{e}"] = token_path
        return paths


def _check_provision_args(nu: int, m: int) -> None:
    if nu < 2:
        raise InvalidParameters(f"need at least 2 employees, got {nu}")
    if m < 1:
        raise InvalidParameters(f"need at least 1 set per pair, got {m}")


def provision(
    nu: int,
    m: int,
    source: RandomSource = default_random,
    registry: Optional[CipherRegistry] = None,
) -> Distribution:
    """Generate m split-and-wrapped call keysets for every unordered pair."""
    _check_provision_args(nu, m)
    registry = registry or default_registry()
    call_spec = registry.role_spec("call")
    wrap_spec = registry.role_spec("callwrap")
    dist = Distribution(nu=nu, m=m, mode=MODE_SPLIT, registry=registry)
    for i in range(nu):
        for j in range(i + 1, nu):
            for t in range(1, m + 1):
                call_key = KeyMaterial.random(call_spec.key_length, source)
                halves = split(call_key, source)
                wrap_a = KeyMaterial.random(wrap_spec.key_length, source)
                wrap_b = KeyMaterial.random(wrap_spec.key_length, source)
                s1 = registry.encrypt(wrap_spec, wrap_a, halves.half_a.bytes, source)
                s2 = registry.encrypt(wrap_spec, wrap_b, halves.half_b.bytes, source)
                dist.entries.append(KeysetEntry(
                    pair=(i, j), index=t,
                    phone_part=KeysetPart(wrap_b.bytes, s1),
                    token_part=KeysetPart(wrap_a.bytes, s2),
                ))
                for km in (call_key, halves.half_a, halves.half_b, wrap_a, wrap_b):
                    km.zeroize()
    return dist


def provision_simple(
    nu: int,
    m: int,
    source: RandomSource = default_random,
    registry: Optional[CipherRegistry] = None,
) -> Distribution:
    """Generate m plain one-time call keys per pair (single-cryptosystem variant)."""
    _check_provision_args(nu, m)
    registry = registry or default_registry()
    call_spec = registry.role_spec("call")
    dist = Distribution(nu=nu, m=m, mode=MODE_SIMPLE, registry=registry)
    for i in range(nu):
        for j in range(i + 1, nu):
            for t in range(1, m + 1):
                key = KeyMaterial.random(call_spec.key_length, source)
                dist.entries.append(SimpleKeysetEntry(pair=(i, j), index=t, call_key=key.bytes))
                key.zeroize()
    return dist


# -- call sessions -------------------------------------------------------------------------

class CallSession:
    """Keystream state for one call; transforms chunks in order per direction."""

    def __init__(self, registry: CipherRegistry, spec: CipherSpec, key: KeyMaterial,
                 store, token, pair: Pair, index: int, owner: int) -> None:
        self._registry = registry
        self._spec = spec
        self._key = key
        self._store = store
        self._token = token
        self.pair = pair
        self.index = index
        self.owner = owner
        self.outcome: Optional[str] = None
        self._contexts: Dict[int, object] = {}
        self._closed = False

    @property
    def closed(self) -> bool:
        return self._closed

    @property
    def key_fingerprint(self) -> str:
        """SHA-256 of the call key; lets endpoints compare keys without exposing them."""
        if self._closed:
            raise SessionClosed("call is closed")
        return hashlib.sha256(self._key.bytes).hexdigest()

    def _context(self, direction: int):
        ctx = self._contexts.get(direction)
        if ctx is None:
            if self._spec.nonce_length > 0:
                nonce = bytes([direction]) + bytes(self._spec.nonce_length - 1)
            else:
                nonce = b""  # nonce-less ciphers share one stream across directions
            ctx = self._registry.context(self._spec, self._key, nonce)
            self._contexts[direction] = ctx
        return ctx

    def transform(self, direction: int, chunk: bytes) -> bytes:
        if self._closed:
            raise SessionClosed("call is closed")
        if direction not in (DIR_A_TO_B, DIR_B_TO_A):
            raise InvalidParameters(f"direction must be 0 or 1, got {direction}")
        if not chunk:
            return b""
        return self._context(direction).update(bytes(chunk))


def open_call(store, token, peer: int, index: int,
              registry: Optional[CipherRegistry] = None) -> CallSession:
    """Restore the call key for set `index` with `peer`; the set stays fresh until close."""
    pair = normalize_pair(store.owner, peer)
    entry = store.require_fresh(pair, index)
    registry = registry or store.registry or default_registry()
    call_spec = registry.role_spec("call")
    if store.mode == MODE_SIMPLE:
        key = KeyMaterial(entry.call_key)
        return CallSession(registry, call_spec, key, store, None, pair, index, store.owner)
    wrap_spec = registry.role_spec("callwrap")
    try:
        blob = token.get(keyset_key_id(pair, index))
    except TokenRecordMissing as exc:
        raise MissingEntry(f"token holds no keyset {index} for pair {pair}") from exc
    token_part = _parse_token_blob(blob)
    wrap_a = KeyMaterial(token_part.wrap_key)
    wrap_b = KeyMaterial(entry.phone_part.wrap_key)
    try:
        half_a = KeyMaterial(registry.decrypt(wrap_spec, wrap_a, entry.phone_part.wrapped_half))
        half_b = KeyMaterial(registry.decrypt(wrap_spec, wrap_b, token_part.wrapped_half))
        try:
            key = combine(half_a, half_b)
        finally:
            half_a.zeroize()
            half_b.zeroize()
    finally:
        wrap_a.zeroize()
        wrap_b.zeroize()
    return CallSession(registry, call_spec, key, store, token, pair, index, store.owner)


def stream_chunk(session: CallSession, direction: int, chunk: bytes) -> bytes:
    """Encrypt or decrypt one chunk; the transform is its own inverse at equal offsets."""
    return session.transform(direction, chunk)


def close_call(session: CallSession, outcome: str) -> None:
    """Consume the keyset and destroy session secrets; never raises.

    Both outcomes ("completed" and "connection_failed") consume the entry.
    Token-side deletion is retried once and then queued on the phone store
    for a later flush.
    """
    if outcome not in ("completed", "connection_failed"):
        raise InvalidParameters(f"unknown outcome {outcome!r}")
    if session.closed:
        return
    session.outcome = outcome
    session._store.mark_consumed(session.pair, session.index)
    if session._token is not None:
        key_id = keyset_key_id(session.pair, session.index)
        for attempt in (0, 1):
            try:
                session._token.delete(key_id)
                break
            except TokenRecordMissing:
                break  # peer already deleted it
            except TokenUnreachable:
                if attempt == 1:
                    session._store.queue_delete(key_id)
    session._key.zeroize()
    session._contexts.clear()
    session._closed = True


# -- loopback harness ------------------------------------------------------------------------

def run_loopback_call(
    store_a,
    store_b,
    token_a,
    token_b,
    index: Optional[int] = None,
    payload_a: bytes = b"",
    payload_b: bytes = b"",
    chunk_size: int = 1024,
) -> Dict[str, object]:
    """Drive a full two-endpoint call in process: open, stream both ways, close.

    Stands in for the voice channel: endpoint A's ciphertext chunks are fed
    straight into endpoint B's transform and vice versa.
    """
    pair = normalize_pair(store_a.owner, store_b.owner)
    k = index if index is not None else store_a.next_fresh_index(pair)
    session_a = open_call(store_a, token_a, store_b.owner, k)
    session_b = open_call(store_b, token_b, store_a.owner, k)
    fingerprints_match = session_a.key_fingerprint == session_b.key_fingerprint
    dir_a = DIR_A_TO_B if store_a.owner < store_b.owner else DIR_B_TO_A
    dir_b = DIR_B_TO_A if store_a.owner < store_b.owner else DIR_A_TO_B

    def pump(src_session, dst_session, direction, payload: bytes) -> bool:
        received = bytearray()
        for off in range(0, len(payload), chunk_size):
            chunk = payload[off:off + chunk_size]
            wire = stream_chunk(src_session, direction, chunk)
            received += stream_chunk(dst_session, direction, wire)
        return bytes(received) == payload

    ok_ab = pump(session_a, session_b, dir_a, payload_a)
    ok_ba = pump(session_b, session_a, dir_b, payload_b)
    close_call(session_a, "completed")
    close_call(session_b, "completed")
    return {
        "pair": pair,
        "index": k,
        "keys_match": fingerprints_match,
        "bytes_a_to_b": len(payload_a),
        "bytes_b_to_a": len(payload_b),
        "roundtrip_ok": ok_ab and ok_ba,
    }
