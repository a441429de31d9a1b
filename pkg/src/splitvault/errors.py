"""Exception types shared across the package.

Each class carries EXIT_CODE so the CLI can map failures to stable,
distinct process exit codes (table in the README).
"""


class SplitVaultError(Exception):
    EXIT_CODE = 1


# -- key material / splitting -------------------------------------------------

class ZeroizedMaterial(SplitVaultError):
    """Operation attempted on key material that was already destroyed."""
    EXIT_CODE = 8


class RandomnessExhausted(SplitVaultError):
    """The random source could not supply the requested number of bytes."""
    EXIT_CODE = 8


class LengthMismatch(SplitVaultError):
    EXIT_CODE = 8


class InvalidParameters(SplitVaultError):
    EXIT_CODE = 8


# -- cipher registry -----------------------------------------------------------

class WrongKeyLength(SplitVaultError):
    EXIT_CODE = 8


class UnknownCipher(SplitVaultError):
    EXIT_CODE = 8


class CipherMismatch(SplitVaultError):
    """Ciphertext was produced by a different cipher than requested."""
    EXIT_CODE = 8


class MalformedCiphertext(SplitVaultError):
    EXIT_CODE = 7


class DuplicateCipherId(SplitVaultError):
    EXIT_CODE = 6


class RoleConflict(SplitVaultError):
    """A role binding violates the two-cipher disjointness rules."""
    EXIT_CODE = 6


# -- vault ----------------------------------------------------------------------

class BadPassword(SplitVaultError):
    EXIT_CODE = 3


class VaultLocked(SplitVaultError):
    EXIT_CODE = 3


class CorruptStore(SplitVaultError):
    EXIT_CODE = 7


# token_store uses this spelling for the same condition
StoreCorrupt = CorruptStore


class DuplicateDocId(SplitVaultError):
    EXIT_CODE = 6


class UnknownDocument(SplitVaultError):
    EXIT_CODE = 5


class AlreadyDestroyed(SplitVaultError):
    EXIT_CODE = 6


# -- token service / client ------------------------------------------------------

class TokenUnreachable(SplitVaultError):
    """Token service cannot be used; nothing stored there is obtainable."""
    EXIT_CODE = 4


class TokenDenied(TokenUnreachable):
    """Service refused the device (revoked or not admitted)."""
    EXIT_CODE = 4


class TokenError(SplitVaultError):
    """Service answered ERR (storage failure or bad request)."""
    EXIT_CODE = 4


class TokenRecordMissing(SplitVaultError):
    EXIT_CODE = 5


class FrameError(SplitVaultError):
    """Malformed or oversized wire frame."""
    EXIT_CODE = 7


class BindFailure(SplitVaultError):
    EXIT_CODE = 4


class UnknownDevice(SplitVaultError):
    EXIT_CODE = 5


# -- call keysets -----------------------------------------------------------------

class AlreadyConsumed(SplitVaultError):
    EXIT_CODE = 6


class MissingEntry(SplitVaultError):
    EXIT_CODE = 5


class SessionClosed(SplitVaultError):
    EXIT_CODE = 8


# -- key generation / audit ---------------------------------------------------------

class MalformedPass(SplitVaultError):
    EXIT_CODE = 8


class EmptyInput(SplitVaultError):
    EXIT_CODE = 8


class InvalidDeck(SplitVaultError):
    EXIT_CODE = 8


class InsufficientEntropy(SplitVaultError):
    EXIT_CODE = 8


class GeneratorFailure(SplitVaultError):
    EXIT_CODE = 8
