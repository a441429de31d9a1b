"""splitvault: split-key encryption with cross-device placement.

Document and call keys never exist whole at rest: each key is split into two
uniformly random-looking halves, each half is wrapped under its own key, and
the wrapped material is placed so that the phone and the token each hold one
wrap key plus the OTHER side's wrapped half. Neither store alone can decrypt
anything; reading requires both and destroys every interim secret afterwards.
"""

from .call_keysets import (
    CallSession,
    Distribution,
    close_call,
    load_phone_store,
    open_call,
    provision,
    provision_simple,
    run_loopback_call,
    stream_chunk,
)
from .cipher_suite import (
    CipherRegistry,
    CipherSpec,
    Ciphertext,
    default_registry,
)
from .config import Config
from .document_vault import DocumentRecord, PlaintextHandle, TokenRecord, Vault
from .errors import SplitVaultError
from .keygen_audit import (
    AuditReport,
    CardPass,
    EntropyReport,
    Verdict,
    collision_audit,
    combine_passes,
    entropy_estimate,
    generate_key,
    pass_to_bits,
)
from .randomness import default_random, seeded_random
from .secret_split import KeyMaterial, SplitPair, combine, split
from .token_store import TokenClient, TokenService

__version__ = "0.1.0"

__all__ = [
    "AuditReport",
    "CallSession",
    "CardPass",
    "CipherRegistry",
    "CipherSpec",
    "Ciphertext",
    "Config",
    "Distribution",
    "DocumentRecord",
    "EntropyReport",
    "KeyMaterial",
    "PlaintextHandle",
    "SplitPair",
    "SplitVaultError",
    "TokenClient",
    "TokenRecord",
    "TokenService",
    "Vault",
    "Verdict",
    "close_call",
    "collision_audit",
    "combine",
    "combine_passes",
    "default_random",
    "default_registry",
    "entropy_estimate",
    "generate_key",
    "load_phone_store",
    "open_call",
    "pass_to_bits",
    "provision",
    "provision_simple",
    "run_loopback_call",
    "seeded_random",
    "split",
    "stream_chunk",
]
