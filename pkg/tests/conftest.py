import pytest

from splitvault import Vault, default_registry
from splitvault.token_store import TokenClient, TokenService

KDF_ITERS = 1000  # keep unlock fast in tests; cost is configurable in production


@pytest.fixture(scope="session")
def registry():
    return default_registry()


@pytest.fixture
def token_env(tmp_path):
    """A running wristband-mode token service plus a connected client."""
    service = TokenService(str(tmp_path / "token.blob")).start()
    client = TokenClient(service.address)
    yield service, client
    client.close()
    service.stop()


@pytest.fixture
def make_vault(tmp_path, registry):
    def _make(name="vault.svlt", password="test-password", **kwargs):
        kwargs.setdefault("kdf_iterations", KDF_ITERS)
        return Vault.create(str(tmp_path / name), password, registry, **kwargs)

    return _make
