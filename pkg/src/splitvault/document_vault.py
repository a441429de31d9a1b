"""Password-gated document vault with cross-device key placement.

Per document: a fresh document key encrypts the plaintext; the key is split
in two; each half is wrapped under its own fresh wrap key. The phone keeps
{encrypted document, wrap key B, wrapped half A} and the token keeps
{wrap key A, wrapped half B}: each side holds one wrap key and the OTHER
side's wrapped half, so neither store alone can unwrap anything.

Reading fetches the token pair, unwraps both halves, recombines the document
key, decrypts, and then zeroizes every interim secret; the phone is left
holding exactly the triple it started with. The vault tracks all live interim
key material in an introspectable ephemeral set so tests can assert the
cleanup actually happened, including on failures.

Store file layout (encrypted at rest under a password-derived key):

    magic "SVLT" | version u8 | salt[16] | kdf_iterations u32 BE |
    verifier[32] = SHA-256(derived_key || salt || "splitvault-verify") |
    serialized Ciphertext of the record table

Record table: one TLV envelope (tag 0x00) per record, containing
0x01 doc_id (UTF-8), 0x02 d_prime (serialized ciphertext), 0x03 wrap_key_b,
0x04 s1 (serialized ciphertext), 0x05 created_at (u64 BE Unix seconds).
"""

import hashlib
import os
import struct
import threading
import time
from dataclasses import dataclass
from typing import Dict, List, Optional

from . import tlv
from .cipher_suite import CipherRegistry, Ciphertext
from .errors import (
    AlreadyDestroyed,
    BadPassword,
    CorruptStore,
    DuplicateDocId,
    InvalidParameters,
    MalformedCiphertext,
    TokenRecordMissing,
    UnknownDocument,
    VaultLocked,
)
from .randomness import RandomSource, default_random, draw_bytes
from .secret_split import KeyMaterial, combine, split

MAGIC = b"SVLT"
VERSION = 1
SALT_LEN = 16
DEFAULT_KDF_ITERATIONS = 600_000

TAG_RECORD = 0x00
TAG_DOC_ID = 0x01
TAG_D_PRIME = 0x02
TAG_WRAP_KEY_B = 0x03
TAG_S1 = 0x04
TAG_CREATED_AT = 0x05

# token-side blob: the opposite wrap key and the opposite wrapped half
TAG_WRAP_KEY_A = 0x03
TAG_S2 = 0x04


def doc_key_id(doc_id: str) -> bytes:
    return b"doc/" + doc_id.encode("utf-8")


def derive_store_key(password: str, salt: bytes, iterations: int, length: int) -> KeyMaterial:
    dk = hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), salt, iterations, dklen=length)
    return KeyMaterial(dk)


def _verifier(key: KeyMaterial, salt: bytes) -> bytes:
    return hashlib.sha256(key.bytes + salt + b"splitvault-verify").digest()


@dataclass
class DocumentRecord:
    doc_id: str
    d_prime: Ciphertext
    wrap_key_b: KeyMaterial
    s1: Ciphertext
    created_at: int

    def to_bytes(self) -> bytes:
        return (
            tlv.encode(TAG_DOC_ID, self.doc_id.encode("utf-8"))
            + tlv.encode(TAG_D_PRIME, self.d_prime.to_bytes())
            + tlv.encode(TAG_WRAP_KEY_B, self.wrap_key_b.bytes)
            + tlv.encode(TAG_S1, self.s1.to_bytes())
            + tlv.encode(TAG_CREATED_AT, struct.pack(">Q", self.created_at))
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "DocumentRecord":
        fields = dict(tlv.iter_fields(data))
        try:
            return cls(
                doc_id=fields[TAG_DOC_ID].decode("utf-8"),
                d_prime=Ciphertext.from_bytes(fields[TAG_D_PRIME]),
                wrap_key_b=KeyMaterial(fields[TAG_WRAP_KEY_B]),
                s1=Ciphertext.from_bytes(fields[TAG_S1]),
                created_at=struct.unpack(">Q", fields[TAG_CREATED_AT])[0],
            )
        except (KeyError, struct.error, UnicodeDecodeError) as exc:
            raise CorruptStore(f"bad document record: {exc}") from exc


@dataclass
class TokenRecord:
    doc_id: str
    wrap_key_a: KeyMaterial
    s2: Ciphertext

    def to_blob(self) -> bytes:
        return tlv.encode(TAG_WRAP_KEY_A, self.wrap_key_a.bytes) + tlv.encode(TAG_S2, self.s2.to_bytes())

    @classmethod
    def from_blob(cls, doc_id: str, blob: bytes) -> "TokenRecord":
        # A garbage blob means the token does not hold a usable record.
        try:
            fields = dict(tlv.iter_fields(blob))
            return cls(
                doc_id=doc_id,
                wrap_key_a=KeyMaterial(fields[TAG_WRAP_KEY_A]),
                s2=Ciphertext.from_bytes(fields[TAG_S2]),
            )
        except (CorruptStore, MalformedCiphertext, InvalidParameters, KeyError) as exc:
            raise TokenRecordMissing(f"token blob for {doc_id!r} is malformed") from exc


class PlaintextHandle:
    """Decrypted document bytes under vault management.

    The buffer can be destroyed (zeroized) once the caller is done reading;
    afterwards any access raises AlreadyDestroyed.
    """

    def __init__(self, data: bytes) -> None:
        self._buf = bytearray(data)
        self._destroyed = False

    @property
    def data(self) -> bytes:
        if self._destroyed:
            raise AlreadyDestroyed("plaintext buffer was destroyed")
        return bytes(self._buf)

    @property
    def destroyed(self) -> bool:
        return self._destroyed

    def destroy(self) -> None:
        if self._destroyed:
            raise AlreadyDestroyed("plaintext buffer was already destroyed")
        for i in range(len(self._buf)):
            self._buf[i] = 0
        self._destroyed = True

    def __bytes__(self) -> bytes:
        return self.data

    def __len__(self) -> int:
        return len(self._buf)


class Vault:
    """One phone-side store: unlocked state, records, and ephemeral tracking.

    Mutations are serialized by an instance lock. With autosave on (the
    default) every mutation rewrites the store file; bulk callers may turn it
    off and call save() once.
    """

    def __init__(
        self,
        path: str,
        registry: CipherRegistry,
        store_key: KeyMaterial,
        salt: bytes,
        kdf_iterations: int,
        store_cipher_id: str,
        autosave: bool = True,
        source: RandomSource = default_random,
    ) -> None:
        self.path = path
        self.registry = registry
        self.autosave = autosave
        self._source = source
        self._store_key = store_key
        self._salt = salt
        self._kdf_iterations = kdf_iterations
        self._store_cipher_id = store_cipher_id
        self._unlocked = True
        self._dirty = False
        self.records: Dict[str, DocumentRecord] = {}
        self._ephemeral: set = set()
        self._plaintexts: List[PlaintextHandle] = []
        self._lock = threading.RLock()

    # -- lifecycle --

    @classmethod
    def create(
        cls,
        path: str,
        password: str,
        registry: CipherRegistry,
        kdf_iterations: int = DEFAULT_KDF_ITERATIONS,
        source: RandomSource = default_random,
        autosave: bool = True,
    ) -> "Vault":
        if os.path.exists(path):
            raise CorruptStore(f"refusing to overwrite existing store {path}")
        spec = registry.role_spec("document")
        salt = draw_bytes(source, SALT_LEN)
        store_key = derive_store_key(password, salt, kdf_iterations, spec.key_length)
        vault = cls(path, registry, store_key, salt, kdf_iterations, spec.id,
                    autosave=autosave, source=source)
        vault.save()
        return vault

    @classmethod
    def unlock(
        cls,
        path: str,
        password: str,
        registry: CipherRegistry,
        source: RandomSource = default_random,
        autosave: bool = True,
    ) -> "Vault":
        """Open an existing store; wrong passwords fail closed with no records revealed."""
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise CorruptStore(f"cannot read store {path}: {exc}") from exc
        header = struct.Struct(f">4sB{SALT_LEN}sI32s")
        if len(raw) < header.size or raw[:4] != MAGIC:
            raise CorruptStore(f"{path} is not a vault store")
        magic, version, salt, iterations, verifier = header.unpack_from(raw)
        if version != VERSION:
            raise CorruptStore(f"unsupported store version {version}")
        try:
            table_ct = Ciphertext.from_bytes(raw[header.size:])
        except Exception as exc:
            raise CorruptStore(f"corrupt record table: {exc}") from exc
        spec = registry.spec(table_ct.cipher_id)
        store_key = derive_store_key(password, salt, iterations, spec.key_length)
        if _verifier(store_key, salt) != verifier:
            store_key.zeroize()
            raise BadPassword("password does not match this store")
        table = registry.decrypt(spec, store_key, table_ct)
        vault = cls(path, registry, store_key, salt, iterations, spec.id,
                    autosave=autosave, source=source)
        for tag, value in tlv.iter_fields(table):
            if tag != TAG_RECORD:
                raise CorruptStore(f"unexpected table tag 0x{tag:02x}")
            record = DocumentRecord.from_bytes(value)
            vault.records[record.doc_id] = record
        return vault

    def lock(self) -> None:
        with self._lock:
            if not self._unlocked:
                return
            if self._dirty:
                self.save()
            for record in self.records.values():
                record.wrap_key_b.zeroize()
            self.records.clear()
            self._store_key.zeroize()
            self._plaintexts.clear()
            self._unlocked = False

    @property
    def unlocked(self) -> bool:
        return self._unlocked

    @property
    def ephemeral_keys(self) -> frozenset:
        """Live interim KeyMaterial handles; empty whenever no operation is in flight."""
        with self._lock:
            return frozenset(self._ephemeral)

    @property
    def managed_plaintexts(self) -> List[PlaintextHandle]:
        return list(self._plaintexts)

    def _require_unlocked(self) -> None:
        if not self._unlocked:
            raise VaultLocked("vault is locked")

    def save(self) -> None:
        with self._lock:
            if not self._unlocked:
                raise VaultLocked("vault is locked")
            table = b"".join(
                tlv.encode(TAG_RECORD, record.to_bytes()) for record in self.records.values()
            )
            spec = self.registry.spec(self._store_cipher_id)
            ct = self.registry.encrypt(spec, self._store_key, table, self._source)
            header = struct.pack(
                f">4sB{SALT_LEN}sI32s",
                MAGIC, VERSION, self._salt, self._kdf_iterations,
                _verifier(self._store_key, self._salt),
            )
            tmp = self.path + ".tmp"
            with open(tmp, "wb") as fh:
                fh.write(header + ct.to_bytes())
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.path)
            self._dirty = False

    # -- operations --

    def encrypt_document(self, token, doc_id: str, plaintext: bytes,
                         source: Optional[RandomSource] = None) -> DocumentRecord:
        """Encrypt plaintext under a fresh split key and cross-place the halves.

        The token PUT happens before the local commit; on failure nothing is
        persisted on either side and every generated key is zeroized.
        """
        source = source or self._source
        with self._lock:
            self._require_unlocked()
            if doc_id in self.records:
                raise DuplicateDocId(doc_id)
            doc_spec = self.registry.role_spec("document")
            wrap_spec = self.registry.role_spec("wrap")
            tracked: List[KeyMaterial] = []

            def ephemeral(km: KeyMaterial) -> KeyMaterial:
                self._ephemeral.add(km)
                tracked.append(km)
                return km

            try:
                doc_key = ephemeral(KeyMaterial.random(doc_spec.key_length, source))
                d_prime = self.registry.encrypt(doc_spec, doc_key, plaintext, source)
                halves = split(doc_key, source)
                ephemeral(halves.half_a)
                ephemeral(halves.half_b)
                wrap_a = ephemeral(KeyMaterial.random(wrap_spec.key_length, source))
                wrap_b = KeyMaterial.random(wrap_spec.key_length, source)  # persists in the record
                # s1 wraps half_a under wrap_a; s2 wraps half_b under wrap_b
                s1 = self.registry.encrypt(wrap_spec, wrap_a, halves.half_a.bytes, source)
                s2 = self.registry.encrypt(wrap_spec, wrap_b, halves.half_b.bytes, source)
                token_record = TokenRecord(doc_id=doc_id, wrap_key_a=wrap_a, s2=s2)
                token.put(doc_key_id(doc_id), token_record.to_blob())
                record = DocumentRecord(
                    doc_id=doc_id,
                    d_prime=d_prime,
                    wrap_key_b=wrap_b,
                    s1=s1,
                    created_at=int(time.time()),
                )
                try:
                    self.records[doc_id] = record
                    self._dirty = True
                    if self.autosave:
                        self.save()
                except BaseException:
                    self.records.pop(doc_id, None)
                    try:
                        token.delete(doc_key_id(doc_id))
                    except Exception:
                        pass
                    raise
                return record
            finally:
                for km in tracked:
                    km.zeroize()
                    self._ephemeral.discard(km)

    def read_document(self, token, doc_id: str) -> PlaintextHandle:
        """Fetch the token pair, unwrap, recombine, decrypt.

        Interim keys are zeroized whether the read succeeds or fails at any
        step; persistent phone state is untouched either way.
        """
        with self._lock:
            self._require_unlocked()
            record = self.records.get(doc_id)
            if record is None:
                raise UnknownDocument(doc_id)
            doc_spec = self.registry.role_spec("document")
            wrap_spec = self.registry.role_spec("wrap")
            tracked: List[KeyMaterial] = []

            def ephemeral(km: KeyMaterial) -> KeyMaterial:
                self._ephemeral.add(km)
                tracked.append(km)
                return km

            try:
                blob = token.get(doc_key_id(doc_id))
                token_record = TokenRecord.from_blob(doc_id, blob)
                ephemeral(token_record.wrap_key_a)
                half_a = ephemeral(
                    KeyMaterial(self.registry.decrypt(wrap_spec, token_record.wrap_key_a, record.s1))
                )
                half_b = ephemeral(
                    KeyMaterial(self.registry.decrypt(wrap_spec, record.wrap_key_b, token_record.s2))
                )
                doc_key = ephemeral(combine(half_a, half_b))
                plaintext = self.registry.decrypt(doc_spec, doc_key, record.d_prime)
                handle = PlaintextHandle(plaintext)
                self._plaintexts.append(handle)
                return handle
            finally:
                for km in tracked:
                    km.zeroize()
                    self._ephemeral.discard(km)

    def remove_document(self, token, doc_id: str) -> None:
        """Delete a document from both stores; the token side goes first."""
        with self._lock:
            self._require_unlocked()
            if doc_id not in self.records:
                raise UnknownDocument(doc_id)
            try:
                token.delete(doc_key_id(doc_id))
            except TokenRecordMissing:
                pass
            record = self.records.pop(doc_id)
            record.wrap_key_b.zeroize()
            self._dirty = True
            if self.autosave:
                self.save()

    def destroy_plaintext(self, handle: PlaintextHandle) -> None:
        handle.destroy()

    def list_ids(self) -> List[str]:
        self._require_unlocked()
        return sorted(self.records)
