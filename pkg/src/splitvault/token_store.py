"""Networked token store: the off-phone half of every secret lives here.

The service is a key-value store over a framed TCP protocol. It stores opaque
blobs and never learns which blob is a wrap key and which is a wrapped half;
intercepting this traffic yields only encrypted material.

Wire protocol, all integers big-endian:

    frame   := length:u32  opcode:u8  payload
               (length covers opcode + payload; max frame 1 MiB)
    key_id  := klen:u16  bytes            (klen <= 256)
    blob    := blen:u32  bytes

    requests                                  payload
      0x00 HELLO   announce device            key_id-encoded device id
      0x01 PUT     store blob                 flags:u8 (bit0 = overwrite), key_id, blob
      0x02 GET     fetch blob                 key_id
      0x03 DELETE  remove blob                key_id
      0x04 LIST    enumerate ids              key_id-encoded prefix (may be empty)

    responses                                 payload
      0x80 OK                                 GET: blob; LIST: count:u32 then key_id*; else empty
      0x81 NOT_FOUND                          empty
      0x82 DENIED                             empty
      0x83 ERR                                blob-encoded ASCII message

Modes: a "wristband" service admits any connection. An "enterprise" service
requires HELLO before any other opcode, auto-enrolls first-seen device ids,
and answers DENIED to every frame from a revoked device. Revocation is a
local admin action (registry file edit), not a wire operation, and the
registry is consulted on every frame so a revocation takes effect
immediately.
"""

import json
import os
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from . import tlv
from .errors import (
    BindFailure,
    CorruptStore,
    FrameError,
    TokenDenied,
    TokenError,
    TokenRecordMissing,
    TokenUnreachable,
    UnknownDevice,
)

OP_HELLO = 0x00
OP_PUT = 0x01
OP_GET = 0x02
OP_DELETE = 0x03
OP_LIST = 0x04
RESP_OK = 0x80
RESP_NOT_FOUND = 0x81
RESP_DENIED = 0x82
RESP_ERR = 0x83

MAX_FRAME = 1 << 20
MAX_KEY_ID = 256
PUT_OVERWRITE = 0x01


@dataclass
class Frame:
    opcode: int
    payload: bytes


# -- codec ------------------------------------------------------------------

def encode_frame(frame: Frame) -> bytes:
    if not 0 <= frame.opcode <= 0xFF:
        raise FrameError(f"opcode out of range: {frame.opcode}")
    length = 1 + len(frame.payload)
    if length > MAX_FRAME:
        raise FrameError(f"frame of {length} bytes exceeds {MAX_FRAME}")
    return struct.pack(">IB", length, frame.opcode) + frame.payload


def decode_frame(data: bytes) -> Frame:
    """Decode exactly one frame; trailing bytes are an error."""
    if len(data) < 5:
        raise FrameError("short frame")
    length, opcode = struct.unpack_from(">IB", data)
    if length > MAX_FRAME:
        raise FrameError(f"frame of {length} bytes exceeds {MAX_FRAME}")
    if len(data) - 4 != length:
        raise FrameError(f"frame length {length} does not match {len(data) - 4} present")
    return Frame(opcode=opcode, payload=bytes(data[5:]))


def encode_key_id(key_id: bytes) -> bytes:
    if len(key_id) > MAX_KEY_ID:
        raise FrameError(f"key id of {len(key_id)} bytes exceeds {MAX_KEY_ID}")
    return struct.pack(">H", len(key_id)) + key_id


def encode_blob(blob: bytes) -> bytes:
    return struct.pack(">I", len(blob)) + blob


def parse_key_id(data: bytes, off: int = 0) -> Tuple[bytes, int]:
    if len(data) - off < 2:
        raise FrameError("truncated key id")
    (klen,) = struct.unpack_from(">H", data, off)
    off += 2
    if klen > MAX_KEY_ID or len(data) - off < klen:
        raise FrameError("truncated key id")
    return bytes(data[off:off + klen]), off + klen


def parse_blob(data: bytes, off: int = 0) -> Tuple[bytes, int]:
    if len(data) - off < 4:
        raise FrameError("truncated blob")
    (blen,) = struct.unpack_from(">I", data, off)
    off += 4
    if len(data) - off < blen:
        raise FrameError("truncated blob")
    return bytes(data[off:off + blen]), off + blen


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def read_frame(sock: socket.socket) -> Optional[Frame]:
    """Read one frame from a socket; None on clean EOF."""
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if not 1 <= length <= MAX_FRAME:
        raise FrameError(f"bad frame length {length}")
    rest = _recv_exact(sock, length)
    if rest is None:
        return None
    return Frame(opcode=rest[0], payload=rest[1:])


def send_frame(sock: socket.socket, frame: Frame) -> None:
    sock.sendall(encode_frame(frame))


# -- persistence ----------------------------------------------------------------

_LOG_PUT = 0x01
_LOG_DELETE = 0x02


class BlobStore:
    """Append-only log of put/delete entries with compaction.

    Mutations are fsynced before the caller may acknowledge them. Log entry
    values: put -> key_id encoding followed by blob encoding; delete ->
    key_id encoding.
    """

    def __init__(self, path: str) -> None:
        self.path = path
        self._lock = threading.Lock()
        self._data: Dict[bytes, bytes] = {}
        self._dead_ops = 0
        self._load()
        self._fh = open(self.path, "ab")

    def _load(self) -> None:
        if not os.path.exists(self.path):
            return
        with open(self.path, "rb") as fh:
            raw = fh.read()
        try:
            for tag, value in tlv.iter_fields(raw):
                if tag == _LOG_PUT:
                    key, off = parse_key_id(value)
                    blob, off = parse_blob(value, off)
                    if key in self._data:
                        self._dead_ops += 1
                    self._data[key] = blob
                elif tag == _LOG_DELETE:
                    key, _ = parse_key_id(value)
                    self._data.pop(key, None)
                    self._dead_ops += 1
                else:
                    raise CorruptStore(f"unknown log tag 0x{tag:02x}")
        except FrameError as exc:
            raise CorruptStore(f"corrupt blob store log: {exc}") from exc

    def _append(self, entry: bytes) -> None:
        self._fh.write(entry)
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def put(self, key: bytes, blob: bytes, overwrite: bool = False) -> None:
        with self._lock:
            if key in self._data and not overwrite:
                raise TokenError(f"key exists: {key!r}")
            if key in self._data:
                self._dead_ops += 1
            self._append(tlv.encode(_LOG_PUT, encode_key_id(key) + encode_blob(blob)))
            self._data[key] = blob
            self._maybe_compact()

    def get(self, key: bytes) -> Optional[bytes]:
        with self._lock:
            return self._data.get(key)

    def delete(self, key: bytes) -> bool:
        with self._lock:
            if key not in self._data:
                return False
            self._append(tlv.encode(_LOG_DELETE, encode_key_id(key)))
            del self._data[key]
            self._dead_ops += 2
            self._maybe_compact()
            return True

    def keys(self, prefix: bytes = b"") -> List[bytes]:
        with self._lock:
            return sorted(k for k in self._data if k.startswith(prefix))

    def _maybe_compact(self) -> None:
        if self._dead_ops > max(64, len(self._data)):
            self._compact_locked()

    def _compact_locked(self) -> None:
        tmp = self.path + ".compact"
        with open(tmp, "wb") as fh:
            for key in sorted(self._data):
                fh.write(tlv.encode(_LOG_PUT, encode_key_id(key) + encode_blob(self._data[key])))
            fh.flush()
            os.fsync(fh.fileno())
        self._fh.close()
        os.replace(tmp, self.path)
        self._fh = open(self.path, "ab")
        self._dead_ops = 0

    def compact(self) -> None:
        with self._lock:
            self._compact_locked()

    def close(self, compact: bool = True) -> None:
        with self._lock:
            if compact:
                self._compact_locked()
            self._fh.close()


class DeviceRegistry:
    """Device admission list backed by a JSON file, re-read on every query.

    Writes go through an exclusive lock file so the serving process and the
    admin CLI can share the registry.
    """

    ACTIVE = "active"
    REVOKED = "revoked"

    def __init__(self, path: str) -> None:
        self.path = path

    def _read(self) -> Dict[str, str]:
        try:
            with open(self.path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            return {}
        except (json.JSONDecodeError, OSError) as exc:
            raise CorruptStore(f"corrupt device registry: {exc}") from exc
        if not isinstance(data, dict):
            raise CorruptStore("corrupt device registry: not an object")
        return data

    def _write_locked(self, mutate) -> None:
        import fcntl

        lock_path = self.path + ".lock"
        with open(lock_path, "a+") as lock_fh:
            fcntl.flock(lock_fh.fileno(), fcntl.LOCK_EX)
            try:
                data = self._read()
                mutate(data)
                tmp = self.path + ".tmp"
                with open(tmp, "w", encoding="utf-8") as fh:
                    json.dump(data, fh, indent=0, sort_keys=True)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, self.path)
            finally:
                fcntl.flock(lock_fh.fileno(), fcntl.LOCK_UN)

    def status(self, device_id: str) -> Optional[str]:
        return self._read().get(device_id)

    def enroll(self, device_id: str) -> None:
        def mutate(data):
            # Re-enrollment of a revoked device must be an explicit admin act,
            # never a side effect of the device saying HELLO again.
            if data.get(device_id) != self.REVOKED:
                data[device_id] = self.ACTIVE

        self._write_locked(mutate)

    def revoke(self, device_id: str) -> None:
        known = {}

        def mutate(data):
            known.update(data)
            if device_id not in data:
                raise UnknownDevice(device_id)
            data[device_id] = self.REVOKED

        self._write_locked(mutate)

    def reinstate(self, device_id: str) -> None:
        def mutate(data):
            data[device_id] = self.ACTIVE

        self._write_locked(mutate)

    def devices(self) -> Dict[str, str]:
        return self._read()


# -- service ------------------------------------------------------------------------

class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        service: "TokenService" = self.server.token_service  # type: ignore[attr-defined]
        service._register_connection(self.request)
        device: Optional[str] = None
        try:
            while True:
                try:
                    frame = read_frame(self.request)
                except (FrameError, OSError):
                    return
                if frame is None:
                    return
                try:
                    response, device = service.dispatch(frame, device)
                except FrameError:
                    response = Frame(RESP_ERR, encode_blob(b"malformed payload"))
                try:
                    send_frame(self.request, response)
                except OSError:
                    return
        finally:
            service._unregister_connection(self.request)


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class TokenService:
    """The token side of the system: wristband or enterprise server."""

    def __init__(
        self,
        store_path: str,
        mode: str = "wristband",
        host: str = "127.0.0.1",
        port: int = 0,
        devices_path: Optional[str] = None,
    ) -> None:
        if mode not in ("wristband", "enterprise"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.store = BlobStore(store_path)
        self.registry: Optional[DeviceRegistry] = None
        if mode == "enterprise":
            self.registry = DeviceRegistry(devices_path or store_path + ".devices.json")
        try:
            self._server = _Server((host, port), _Handler)
        except OSError as exc:
            self.store.close(compact=False)
            raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc
        self._server.token_service = self  # type: ignore[attr-defined]
        self._thread: Optional[threading.Thread] = None
        self._conn_lock = threading.Lock()
        self._connections: set = set()

    @property
    def address(self) -> Tuple[str, int]:
        return self._server.server_address[:2]

    def start(self) -> "TokenService":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def _register_connection(self, sock: socket.socket) -> None:
        with self._conn_lock:
            self._connections.add(sock)

    def _unregister_connection(self, sock: socket.socket) -> None:
        with self._conn_lock:
            self._connections.discard(sock)

    def stop(self, compact: bool = True) -> None:
        """Stop serving and drop live connections; a stopped token is unreachable."""
        self._server.shutdown()
        self._server.server_close()
        with self._conn_lock:
            for sock in list(self._connections):
                try:
                    sock.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.store.close(compact=compact)

    # -- dispatch --

    def dispatch(self, frame: Frame, device: Optional[str]) -> Tuple[Frame, Optional[str]]:
        """Handle one request frame; returns (response, device-after-frame)."""
        if self.registry is not None:
            if device is not None and self.registry.status(device) == DeviceRegistry.REVOKED:
                return Frame(RESP_DENIED, b""), device
            if frame.opcode == OP_HELLO:
                device_id, _ = parse_key_id(frame.payload)
                name = device_id.decode("ascii", errors="replace")
                if self.registry.status(name) == DeviceRegistry.REVOKED:
                    return Frame(RESP_DENIED, b""), device
                self.registry.enroll(name)
                return Frame(RESP_OK, b""), name
            if device is None:
                return Frame(RESP_DENIED, b""), device
        elif frame.opcode == OP_HELLO:
            return Frame(RESP_OK, b""), device

        if frame.opcode == OP_PUT:
            if len(frame.payload) < 1:
                raise FrameError("missing flags")
            flags = frame.payload[0]
            key, off = parse_key_id(frame.payload, 1)
            blob, _ = parse_blob(frame.payload, off)
            try:
                self.store.put(key, blob, overwrite=bool(flags & PUT_OVERWRITE))
            except TokenError as exc:
                return Frame(RESP_ERR, encode_blob(str(exc).encode())), device
            return Frame(RESP_OK, b""), device
        if frame.opcode == OP_GET:
            key, _ = parse_key_id(frame.payload)
            blob = self.store.get(key)
            if blob is None:
                return Frame(RESP_NOT_FOUND, b""), device
            return Frame(RESP_OK, encode_blob(blob)), device
        if frame.opcode == OP_DELETE:
            key, _ = parse_key_id(frame.payload)
            if not self.store.delete(key):
                return Frame(RESP_NOT_FOUND, b""), device
            return Frame(RESP_OK, b""), device
        if frame.opcode == OP_LIST:
            prefix, _ = parse_key_id(frame.payload)
            keys = self.store.keys(prefix)
            payload = struct.pack(">I", len(keys)) + b"".join(encode_key_id(k) for k in keys)
            if 1 + len(payload) > MAX_FRAME:
                return Frame(RESP_ERR, encode_blob(b"listing too large")), device
            return Frame(RESP_OK, payload), device
        return Frame(RESP_ERR, encode_blob(b"unknown opcode")), device


# -- client ------------------------------------------------------------------------------

def parse_address(text: str) -> Tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bad address {text!r}, expected host:port")
    return host, int(port)


class TokenClient:
    """Blocking client for the token service.

    Any transport problem surfaces as TokenUnreachable: a half that cannot be
    fetched is a half that does not exist for decryption purposes.
    """

    def __init__(self, address, device_id: Optional[str] = None, timeout: float = 5.0) -> None:
        if isinstance(address, str):
            address = parse_address(address)
        self.address = address
        self.device_id = device_id
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._lock = threading.Lock()
        self._connect()

    def _connect(self) -> None:
        try:
            self._sock = socket.create_connection(self.address, timeout=self.timeout)
        except OSError as exc:
            self._sock = None
            raise TokenUnreachable(f"cannot reach token at {self.address}: {exc}") from exc
        if self.device_id is not None:
            self._roundtrip_locked(Frame(OP_HELLO, encode_key_id(self.device_id.encode("ascii"))))

    def _roundtrip_locked(self, frame: Frame) -> Frame:
        if self._sock is None:
            raise TokenUnreachable("client is closed")
        try:
            send_frame(self._sock, frame)
            response = read_frame(self._sock)
        except (OSError, FrameError) as exc:
            self.close()
            raise TokenUnreachable(f"token connection failed: {exc}") from exc
        if response is None:
            self.close()
            raise TokenUnreachable("token closed the connection")
        if response.opcode == RESP_DENIED:
            raise TokenDenied("token denied the request (device revoked?)")
        return response

    def _roundtrip(self, frame: Frame) -> Frame:
        with self._lock:
            return self._roundtrip_locked(frame)

    def put(self, key_id: bytes, blob: bytes, overwrite: bool = False) -> None:
        flags = PUT_OVERWRITE if overwrite else 0
        payload = bytes([flags]) + encode_key_id(key_id) + encode_blob(blob)
        response = self._roundtrip(Frame(OP_PUT, payload))
        if response.opcode != RESP_OK:
            raise TokenError(_err_message(response))

    def get(self, key_id: bytes) -> bytes:
        response = self._roundtrip(Frame(OP_GET, encode_key_id(key_id)))
        if response.opcode == RESP_NOT_FOUND:
            raise TokenRecordMissing(repr(key_id))
        if response.opcode != RESP_OK:
            raise TokenError(_err_message(response))
        blob, _ = parse_blob(response.payload)
        return blob

    def delete(self, key_id: bytes) -> None:
        response = self._roundtrip(Frame(OP_DELETE, encode_key_id(key_id)))
        if response.opcode == RESP_NOT_FOUND:
            raise TokenRecordMissing(repr(key_id))
        if response.opcode != RESP_OK:
            raise TokenError(_err_message(response))

    def list_keys(self, prefix: bytes = b"") -> List[bytes]:
        response = self._roundtrip(Frame(OP_LIST, encode_key_id(prefix)))
        if response.opcode != RESP_OK:
            raise TokenError(_err_message(response))
        (count,) = struct.unpack_from(">I", response.payload)
        keys, off = [], 4
        for _ in range(count):
            key, off = parse_key_id(response.payload, off)
            keys.append(key)
        return keys

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _err_message(response: Frame) -> str:
    if response.opcode == RESP_ERR and response.payload:
        try:
            msg, _ = parse_blob(response.payload)
            return msg.decode("ascii", errors="replace")
        except FrameError:
            pass
    return f"unexpected response opcode 0x{response.opcode:02x}"
