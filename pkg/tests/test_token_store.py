import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitvault.errors import (
    CorruptStore,
    FrameError,
    TokenDenied,
    TokenError,
    TokenRecordMissing,
    TokenUnreachable,
    UnknownDevice,
)
from splitvault.token_store import (
    MAX_FRAME,
    BlobStore,
    DeviceRegistry,
    Frame,
    TokenClient,
    TokenService,
    decode_frame,
    encode_frame,
    encode_key_id,
    parse_address,
    parse_key_id,
)


class TestFrameCodec:
    @settings(max_examples=200, deadline=None)
    @given(opcode=st.integers(0, 255), payload=st.binary(max_size=4096))
    def test_roundtrip(self, opcode, payload):
        frame = Frame(opcode, payload)
        assert decode_frame(encode_frame(frame)) == frame

    def test_oversized_encode_rejected(self):
        with pytest.raises(FrameError):
            encode_frame(Frame(0x01, bytes(MAX_FRAME)))

    def test_oversized_decode_rejected(self):
        bogus = (MAX_FRAME + 1).to_bytes(4, "big") + b"\x01"
        with pytest.raises(FrameError):
            decode_frame(bogus)

    def test_truncated_decode_rejected(self):
        encoded = encode_frame(Frame(0x02, b"abcdef"))
        with pytest.raises(FrameError):
            decode_frame(encoded[:-1])

    def test_key_id_limit(self):
        encode_key_id(bytes(256))
        with pytest.raises(FrameError):
            encode_key_id(bytes(257))
        with pytest.raises(FrameError):
            parse_key_id(b"\x00")

    def test_parse_address(self):
        assert parse_address("127.0.0.1:7600") == ("127.0.0.1", 7600)
        with pytest.raises(ValueError):
            parse_address("no-port")


class TestBlobStore:
    def test_put_get_delete(self, tmp_path):
        store = BlobStore(str(tmp_path / "s.blob"))
        store.put(b"k", b"v")
        assert store.get(b"k") == b"v"
        assert store.delete(b"k")
        assert store.get(b"k") is None
        assert not store.delete(b"k")
        store.close()

    def test_overwrite_requires_flag(self, tmp_path):
        store = BlobStore(str(tmp_path / "s.blob"))
        store.put(b"k", b"v1")
        with pytest.raises(TokenError):
            store.put(b"k", b"v2")
        store.put(b"k", b"v2", overwrite=True)
        assert store.get(b"k") == b"v2"
        store.close()

    def test_persistence_across_reopen(self, tmp_path):
        path = str(tmp_path / "s.blob")
        store = BlobStore(path)
        store.put(b"a", b"1")
        store.put(b"b", bytes(1000))
        store.delete(b"a")
        store.close(compact=False)
        reopened = BlobStore(path)
        assert reopened.get(b"a") is None
        assert reopened.get(b"b") == bytes(1000)
        reopened.close()

    def test_compaction_preserves_content(self, tmp_path):
        path = str(tmp_path / "s.blob")
        store = BlobStore(path)
        for i in range(20):
            store.put(b"key", b"v%d" % i, overwrite=True)
        size_before = (tmp_path / "s.blob").stat().st_size
        store.compact()
        assert (tmp_path / "s.blob").stat().st_size < size_before
        assert store.get(b"key") == b"v19"
        store.close()
        assert BlobStore(path).get(b"key") == b"v19"

    def test_corrupt_log_rejected(self, tmp_path):
        path = tmp_path / "s.blob"
        path.write_bytes(b"\xff\x00\x00\x00\x10nope")
        with pytest.raises(CorruptStore):
            BlobStore(str(path))

    def test_prefix_listing(self, tmp_path):
        store = BlobStore(str(tmp_path / "s.blob"))
        store.put(b"doc/a", b"1")
        store.put(b"doc/b", b"2")
        store.put(b"ks/0-1/1", b"3")
        assert store.keys(b"doc/") == [b"doc/a", b"doc/b"]
        store.close()


class TestWristbandService:
    def test_get_before_put_is_not_found(self, token_env):
        _, client = token_env
        with pytest.raises(TokenRecordMissing):
            client.get(b"nothing")

    def test_put_get_identity(self, token_env):
        _, client = token_env
        blob = bytes(range(256)) * 4
        client.put(b"key", blob)
        assert client.get(b"key") == blob

    def test_empty_blob(self, token_env):
        _, client = token_env
        client.put(b"empty", b"")
        assert client.get(b"empty") == b""

    def test_delete_then_get(self, token_env):
        _, client = token_env
        client.put(b"gone", b"x")
        client.delete(b"gone")
        with pytest.raises(TokenRecordMissing):
            client.get(b"gone")
        with pytest.raises(TokenRecordMissing):
            client.delete(b"gone")

    def test_duplicate_put_without_overwrite(self, token_env):
        _, client = token_env
        client.put(b"dup", b"1")
        with pytest.raises(TokenError):
            client.put(b"dup", b"2")
        client.put(b"dup", b"2", overwrite=True)
        assert client.get(b"dup") == b"2"

    def test_list_keys(self, token_env):
        _, client = token_env
        client.put(b"list/a", b"")
        client.put(b"list/b", b"")
        assert client.list_keys(b"list/") == [b"list/a", b"list/b"]

    def test_hello_is_harmless(self, tmp_path):
        service = TokenService(str(tmp_path / "t.blob")).start()
        try:
            client = TokenClient(service.address, device_id="phone-9")
            client.put(b"k", b"v")
            assert client.get(b"k") == b"v"
            client.close()
        finally:
            service.stop()

    def test_restart_preserves_records(self, tmp_path):
        path = str(tmp_path / "t.blob")
        service = TokenService(path).start()
        client = TokenClient(service.address)
        client.put(b"persist", b"payload")
        client.close()
        service.stop()

        service = TokenService(path).start()
        client = TokenClient(service.address)
        try:
            assert client.get(b"persist") == b"payload"
        finally:
            client.close()
            service.stop()

    def test_delete_durable_across_restart(self, tmp_path):
        path = str(tmp_path / "t.blob")
        service = TokenService(path).start()
        client = TokenClient(service.address)
        client.put(b"k", b"v")
        client.delete(b"k")
        client.close()
        service.stop()

        service = TokenService(path).start()
        client = TokenClient(service.address)
        try:
            with pytest.raises(TokenRecordMissing):
                client.get(b"k")
        finally:
            client.close()
            service.stop()

    def test_concurrent_puts_all_retrievable(self, tmp_path):
        service = TokenService(str(tmp_path / "t.blob")).start()
        errors = []

        def worker(start):
            try:
                client = TokenClient(service.address)
                for i in range(start, start + 50):
                    client.put(b"soak/%d" % i, b"value-%d" % i)
                client.close()
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [threading.Thread(target=worker, args=(n * 50,)) for n in range(20)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        client = TokenClient(service.address)
        try:
            assert len(client.list_keys(b"soak/")) == 1000
            rng = random.Random(5)
            for _ in range(50):
                i = rng.randrange(1000)
                assert client.get(b"soak/%d" % i) == b"value-%d" % i
        finally:
            client.close()
            service.stop()


@pytest.fixture
def enterprise_env(tmp_path):
    service = TokenService(str(tmp_path / "ent.blob"), mode="enterprise").start()
    yield service
    service.stop()


class TestEnterpriseService:
    def test_opcode_before_hello_denied(self, enterprise_env):
        client = TokenClient(enterprise_env.address)  # no device id, no HELLO
        with pytest.raises(TokenDenied):
            client.put(b"k", b"v")
        client.close()

    def test_hello_then_ops(self, enterprise_env):
        client = TokenClient(enterprise_env.address, device_id="phone-1")
        client.put(b"k", b"v")
        assert client.get(b"k") == b"v"
        client.close()
        assert enterprise_env.registry.status("phone-1") == DeviceRegistry.ACTIVE

    def test_revoked_device_denied_everywhere(self, enterprise_env):
        client = TokenClient(enterprise_env.address, device_id="phone-2")
        client.put(b"mine", b"v")
        enterprise_env.registry.revoke("phone-2")
        for op in (lambda: client.get(b"mine"),
                   lambda: client.put(b"other", b"v"),
                   lambda: client.delete(b"mine"),
                   lambda: client.list_keys()):
            with pytest.raises(TokenDenied):
                op()
        client.close()
        # a fresh connection cannot even HELLO its way back in
        with pytest.raises(TokenDenied):
            TokenClient(enterprise_env.address, device_id="phone-2")

    def test_revoke_unknown_device(self, enterprise_env):
        with pytest.raises(UnknownDevice):
            enterprise_env.registry.revoke("never-seen")

    def test_reinstate_after_revoke(self, enterprise_env):
        TokenClient(enterprise_env.address, device_id="phone-3").close()
        enterprise_env.registry.revoke("phone-3")
        enterprise_env.registry.reinstate("phone-3")
        client = TokenClient(enterprise_env.address, device_id="phone-3")
        client.put(b"back", b"v")
        client.close()


class TestClientTransport:
    def test_unreachable_address(self):
        with pytest.raises(TokenUnreachable):
            TokenClient(("127.0.0.1", 1), timeout=0.5)

    def test_service_stop_surfaces_as_unreachable(self, tmp_path):
        service = TokenService(str(tmp_path / "t.blob")).start()
        client = TokenClient(service.address)
        client.put(b"k", b"v")
        service.stop()
        with pytest.raises(TokenUnreachable):
            client.get(b"k")
        client.close()
