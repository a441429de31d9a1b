"""Runtime configuration: cipher role bindings, KDF cost, token address.

Loaded from a JSON file named by --config or the SPLITVAULT_CONFIG
environment variable; every field has a usable default. Role bindings are
validated (and the registry built) at load time, so a config that breaks the
document/wrap or call/callwrap disjointness rules fails immediately.
"""

import json
import os
from dataclasses import dataclass, field, fields
from typing import Dict, Optional

from .cipher_suite import DEFAULT_ROLES, CipherRegistry, default_registry
from .document_vault import DEFAULT_KDF_ITERATIONS
from .errors import InvalidParameters

ENV_CONFIG = "SPLITVAULT_CONFIG"
ENV_PASSWORD = "SPLITVAULT_PASSWORD"


@dataclass
class Config:
    token_address: str = "127.0.0.1:7600"
    device_id: Optional[str] = None  # HELLO is sent only when set (enterprise mode)
    kdf_iterations: int = DEFAULT_KDF_ITERATIONS
    audit_p_threshold: float = 1e-6
    test_mode: bool = False
    roles: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_ROLES))

    @classmethod
    def load(cls, path: Optional[str] = None) -> "Config":
        path = path or os.environ.get(ENV_CONFIG)
        cfg = cls()
        if not path:
            return cfg
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidParameters(f"cannot load config {path}: {exc}") from exc
        known = {f.name for f in fields(cls)}
        for key, value in data.items():
            if key not in known:
                raise InvalidParameters(f"unknown config key {key!r}")
            setattr(cfg, key, value)
        cfg.build_registry()  # validate role bindings now, not at first use
        return cfg

    def build_registry(self) -> CipherRegistry:
        return default_registry(test_mode=self.test_mode, roles=self.roles)

    def to_dict(self) -> dict:
        return {
            "token_address": self.token_address,
            "device_id": self.device_id,
            "kdf_iterations": self.kdf_iterations,
            "audit_p_threshold": self.audit_p_threshold,
            "test_mode": self.test_mode,
            "roles": dict(self.roles),
        }
