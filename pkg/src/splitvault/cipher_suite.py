"""Pluggable symmetric stream-cipher registry.

Ciphers are registered by id and bound to roles. Two role pairs interact:
"document"/"wrap" (document encryption vs. key wrapping) and
"call"/"callwrap" (call encryption vs. call-key wrapping). Within each pair
the two ciphers must differ in id AND in key length, so their key spaces are
disjoint; the registry refuses bindings that violate this.

Every registered cipher is a stream cipher: ciphertext body length equals
plaintext length, and decrypt(encrypt(x, k), k) == x for every key.
"""

import struct
from dataclasses import dataclass
from typing import Callable, Dict, Tuple

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import (
    CipherMismatch,
    DuplicateCipherId,
    InvalidParameters,
    MalformedCiphertext,
    RoleConflict,
    UnknownCipher,
    WrongKeyLength,
    ZeroizedMaterial,
)
from .randomness import RandomSource, default_random, draw_bytes
from .secret_split import KeyMaterial

ROLES = ("document", "wrap", "call", "callwrap")
_ROLE_PAIRS = (("document", "wrap"), ("call", "callwrap"))

# Context factory: (key, nonce) -> object with update(bytes) -> bytes.
# The transform must be an XOR keystream, so the same context type serves
# both directions and encrypt == decrypt at equal stream offsets.
ContextFactory = Callable[[bytes, bytes], object]


@dataclass(frozen=True)
class CipherSpec:
    id: str
    key_length: int
    nonce_length: int = 0
    description: str = ""
    secure: bool = True


@dataclass
class Ciphertext:
    cipher_id: str
    nonce: bytes
    body: bytes

    def to_bytes(self) -> bytes:
        """Serialize: id (u8 length + ASCII), nonce (u8 length + bytes), body (u32 BE length + bytes)."""
        ident = self.cipher_id.encode("ascii")
        if not 1 <= len(ident) <= 255:
            raise MalformedCiphertext("cipher id must be 1..255 ASCII bytes")
        if len(self.nonce) > 255:
            raise MalformedCiphertext("nonce longer than 255 bytes")
        return (
            bytes([len(ident)]) + ident
            + bytes([len(self.nonce)]) + self.nonce
            + struct.pack(">I", len(self.body)) + self.body
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ciphertext":
        try:
            off = 0
            id_len = data[off]
            off += 1
            ident = data[off:off + id_len]
            if len(ident) != id_len:
                raise MalformedCiphertext("truncated cipher id")
            off += id_len
            nonce_len = data[off]
            off += 1
            nonce = data[off:off + nonce_len]
            if len(nonce) != nonce_len:
                raise MalformedCiphertext("truncated nonce")
            off += nonce_len
            (body_len,) = struct.unpack_from(">I", data, off)
            off += 4
            body = data[off:off + body_len]
            if len(body) != body_len:
                raise MalformedCiphertext("truncated body")
            off += body_len
        except (IndexError, struct.error) as exc:
            raise MalformedCiphertext("truncated ciphertext") from exc
        if off != len(data):
            raise MalformedCiphertext(f"{len(data) - off} trailing bytes after ciphertext")
        return cls(cipher_id=ident.decode("ascii"), nonce=bytes(nonce), body=bytes(body))


# -- built-in cipher backends --------------------------------------------------

def _chacha20_context(key: bytes, nonce: bytes):
    return Cipher(algorithms.ChaCha20(key, nonce), mode=None).encryptor()


def _aes_ctr_context(key: bytes, nonce: bytes):
    return Cipher(algorithms.AES(key), modes.CTR(nonce)).encryptor()


_MASK64 = (1 << 64) - 1
_SEED_MULT = 0x100000001B3
_STEP_MULT = 6364136223846793005
_STEP_INC = 1442695040888963407


class Lcg64Context:
    """Deliberately weak, fully specified keystream for cross-implementation vectors.

    State seeding folds each key byte b as s <- (s * 0x100000001B3) XOR b with
    s starting at 0. Each keystream byte steps s <- s*6364136223846793005 +
    1442695040888963407 mod 2^64 and emits the top 8 bits. 8-byte key, no
    nonce. Registry-flagged non-secure: role bindings refuse it outside test
    mode.
    """

    def __init__(self, key: bytes, nonce: bytes = b"") -> None:
        s = 0
        for b in key:
            s = ((s * _SEED_MULT) ^ b) & _MASK64
        self._s = s

    def update(self, data: bytes) -> bytes:
        out = bytearray(len(data))
        s = self._s
        for i, b in enumerate(data):
            s = (s * _STEP_MULT + _STEP_INC) & _MASK64
            out[i] = b ^ (s >> 56)
        self._s = s
        return bytes(out)


def lcg64_keystream(key: bytes, length: int) -> bytes:
    """Raw keystream of the test cipher (ciphertext of an all-zero plaintext)."""
    return Lcg64Context(key).update(bytes(length))


# -- registry --------------------------------------------------------------------

class CipherRegistry:
    """Immutable-after-setup map of cipher ids to specs and keystream backends."""

    def __init__(self, test_mode: bool = False) -> None:
        self.test_mode = test_mode
        self._entries: Dict[str, Tuple[CipherSpec, ContextFactory]] = {}
        self._roles: Dict[str, str] = {}

    def register(self, spec: CipherSpec, factory: ContextFactory) -> None:
        if spec.id in self._entries:
            raise DuplicateCipherId(spec.id)
        if spec.secure and spec.key_length < 16:
            raise InvalidParameters(
                f"cipher {spec.id}: secure ciphers need a key of >= 16 bytes"
            )
        if spec.key_length < 1 or spec.nonce_length < 0:
            raise InvalidParameters(f"cipher {spec.id}: bad lengths")
        self._entries[spec.id] = (spec, factory)

    def ids(self):
        return sorted(self._entries)

    def spec(self, cipher_id: str) -> CipherSpec:
        try:
            return self._entries[cipher_id][0]
        except KeyError:
            raise UnknownCipher(cipher_id) from None

    def bind_role(self, role: str, cipher_id: str) -> None:
        if role not in ROLES:
            raise InvalidParameters(f"unknown role {role!r}")
        spec = self.spec(cipher_id)
        if not spec.secure and not self.test_mode:
            raise RoleConflict(f"cipher {cipher_id} is flagged non-secure; refused for role {role}")
        previous = self._roles.get(role)
        self._roles[role] = cipher_id
        try:
            self._check_role_pairs()
        except RoleConflict:
            if previous is None:
                del self._roles[role]
            else:
                self._roles[role] = previous
            raise

    def _check_role_pairs(self) -> None:
        for a, b in _ROLE_PAIRS:
            if a in self._roles and b in self._roles:
                sa, sb = self.spec(self._roles[a]), self.spec(self._roles[b])
                if sa.id == sb.id:
                    raise RoleConflict(f"roles {a} and {b} bound to the same cipher {sa.id}")
                if sa.key_length == sb.key_length:
                    raise RoleConflict(
                        f"roles {a} ({sa.id}) and {b} ({sb.id}) share key length {sa.key_length}"
                    )

    def role_spec(self, role: str) -> CipherSpec:
        if role not in ROLES:
            raise InvalidParameters(f"unknown role {role!r}")
        if role not in self._roles:
            raise UnknownCipher(f"no cipher bound to role {role!r}")
        return self.spec(self._roles[role])

    def roles(self) -> Dict[str, str]:
        return dict(self._roles)

    # -- core operations --

    def _factory(self, cipher_id: str) -> ContextFactory:
        try:
            return self._entries[cipher_id][1]
        except KeyError:
            raise UnknownCipher(cipher_id) from None

    def context(self, spec: CipherSpec, key: KeyMaterial, nonce: bytes):
        """Stateful keystream context for incremental transforms (call streams)."""
        factory = self._factory(spec.id)
        if key.zeroized:
            raise ZeroizedMaterial("cipher key has been destroyed")
        if key.length != spec.key_length:
            raise WrongKeyLength(f"cipher {spec.id} needs {spec.key_length}-byte keys, got {key.length}")
        if len(nonce) != spec.nonce_length:
            raise MalformedCiphertext(
                f"cipher {spec.id} needs a {spec.nonce_length}-byte nonce, got {len(nonce)}"
            )
        return factory(key.bytes, nonce)

    def encrypt(
        self,
        spec: CipherSpec,
        key: KeyMaterial,
        plaintext: bytes,
        source: RandomSource = default_random,
    ) -> Ciphertext:
        nonce = draw_bytes(source, spec.nonce_length)
        ctx = self.context(spec, key, nonce)
        return Ciphertext(cipher_id=spec.id, nonce=nonce, body=ctx.update(bytes(plaintext)))

    def decrypt(self, spec: CipherSpec, key: KeyMaterial, ct: Ciphertext) -> bytes:
        if ct.cipher_id != spec.id:
            raise CipherMismatch(f"ciphertext is for {ct.cipher_id!r}, not {spec.id!r}")
        ctx = self.context(spec, key, ct.nonce)
        return ctx.update(ct.body)


DEFAULT_ROLES = {
    "document": "chacha20",
    "wrap": "aes128-ctr",
    "call": "aes256-ctr",
    "callwrap": "aes192-ctr",
}

TEST_CIPHER_ID = "lcg64-test"


def default_registry(test_mode: bool = False, roles: Dict[str, str] | None = None) -> CipherRegistry:
    """Registry with the shipped ciphers and role bindings.

    Bindings come from `roles` (defaults to DEFAULT_ROLES); pair disjointness
    is validated as each role is bound.
    """
    reg = CipherRegistry(test_mode=test_mode)
    reg.register(
        CipherSpec("chacha20", key_length=32, nonce_length=16, description="ChaCha20 stream cipher"),
        _chacha20_context,
    )
    reg.register(
        CipherSpec("aes128-ctr", key_length=16, nonce_length=16, description="AES-128 in CTR mode"),
        _aes_ctr_context,
    )
    reg.register(
        CipherSpec("aes192-ctr", key_length=24, nonce_length=16, description="AES-192 in CTR mode"),
        _aes_ctr_context,
    )
    reg.register(
        CipherSpec("aes256-ctr", key_length=32, nonce_length=16, description="AES-256 in CTR mode"),
        _aes_ctr_context,
    )
    reg.register(
        CipherSpec(
            TEST_CIPHER_ID,
            key_length=8,
            nonce_length=0,
            description="64-bit LCG keystream; test vectors only, not secure",
            secure=False,
        ),
        Lcg64Context,
    )
    for role, cipher_id in (roles or DEFAULT_ROLES).items():
        reg.bind_role(role, cipher_id)
    return reg
