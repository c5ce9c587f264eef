"""Encrypted presence tokens carried as the gateway cookie.

A token is a Fernet container (version 0x80, big-endian seconds timestamp,
16-byte IV, AES-128-CBC ciphertext, HMAC-SHA256 tag) around the payload

    CAHICHA-OK-1|<milliseconds since epoch>

The millisecond timestamp inside the payload is authoritative for expiry;
the container's own seconds field is informational.
"""

from __future__ import annotations

import base64
import enum
import os
import secrets
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

from cryptography.fernet import Fernet, InvalidToken

if TYPE_CHECKING:
    from .config import GatewayConfig

TOKEN_MAGIC = "CAHICHA-OK-1"
PAYLOAD_SEPARATOR = b"|"
DEFAULT_MAX_AGE_MS = 24 * 60 * 60 * 1000
CLOCK_SKEW_ALLOWANCE_MS = 60 * 1000
DEFAULT_COOKIE_NAME = "cahicha_token"

# version(1) + timestamp(8) + IV(16) + >=1 AES block(16) + HMAC(32)
_MIN_CONTAINER_LEN = 73
_CONTAINER_VERSION = 0x80


class EntropyUnavailable(RuntimeError):
    pass


class InvalidReason(enum.Enum):
    MALFORMED_CONTAINER = "MalformedContainer"
    INTEGRITY_FAILURE = "IntegrityFailure"
    BAD_MAGIC = "BadMagic"
    EXPIRED = "Expired"
    CLOCK_SKEW = "ClockSkew"


@dataclass(frozen=True)
class TokenCheck:
    valid: bool
    age_ms: Optional[int] = None
    reason: Optional[InvalidReason] = None

    @staticmethod
    def ok(age_ms: int) -> "TokenCheck":
        return TokenCheck(valid=True, age_ms=age_ms)

    @staticmethod
    def bad(reason: InvalidReason) -> "TokenCheck":
        return TokenCheck(valid=False, reason=reason)


@dataclass(frozen=True)
class TokenKey:
    """32 raw bytes: 16-byte signing key followed by 16-byte encryption key."""

    raw: bytes

    def __post_init__(self):
        if len(self.raw) != 32:
            raise ValueError(f"token key must be 32 bytes, got {len(self.raw)}")

    @property
    def fernet(self) -> Fernet:
        return Fernet(base64.urlsafe_b64encode(self.raw))

    @classmethod
    def generate(cls) -> "TokenKey":
        try:
            return cls(secrets.token_bytes(32))
        except NotImplementedError as exc:  # no OS randomness source
            raise EntropyUnavailable(str(exc)) from exc


def load_or_create_token_key(path: str) -> TokenKey:
    """Read the 32-byte key file, creating it (mode 0600) on first start."""
    if os.path.exists(path):
        with open(path, "rb") as handle:
            return TokenKey(handle.read())
    key = TokenKey.generate()
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
    try:
        os.write(fd, key.raw)
    finally:
        os.close(fd)
    return key


def mint_token(key: TokenKey, now_ms: int) -> str:
    payload = TOKEN_MAGIC.encode("ascii") + PAYLOAD_SEPARATOR + str(now_ms).encode("ascii")
    try:
        token = key.fernet.encrypt_at_time(payload, now_ms // 1000)
    except NotImplementedError as exc:
        raise EntropyUnavailable(str(exc)) from exc
    return token.decode("ascii")


def validate_token(
    key: TokenKey,
    token: str,
    now_ms: int,
    max_age_ms: int = DEFAULT_MAX_AGE_MS,
) -> TokenCheck:
    """Check container integrity, magic, and age (boundary-inclusive).

    A token aged exactly max_age_ms is still valid; strictly older is
    Expired. A minted_at more than 60 s in the future is ClockSkew.
    """
    try:
        container = base64.urlsafe_b64decode(token.encode("ascii"))
    except (ValueError, UnicodeEncodeError):
        return TokenCheck.bad(InvalidReason.MALFORMED_CONTAINER)
    if len(container) < _MIN_CONTAINER_LEN or container[0] != _CONTAINER_VERSION:
        return TokenCheck.bad(InvalidReason.MALFORMED_CONTAINER)

    try:
        payload = key.fernet.decrypt(token.encode("ascii"))
    except InvalidToken:
        return TokenCheck.bad(InvalidReason.INTEGRITY_FAILURE)

    parts = payload.split(PAYLOAD_SEPARATOR)
    if len(parts) != 2:
        return TokenCheck.bad(InvalidReason.MALFORMED_CONTAINER)
    magic, stamp = parts
    if magic != TOKEN_MAGIC.encode("ascii"):
        return TokenCheck.bad(InvalidReason.BAD_MAGIC)
    if not stamp.isdigit():
        return TokenCheck.bad(InvalidReason.MALFORMED_CONTAINER)

    minted_at = int(stamp)
    if minted_at - now_ms > CLOCK_SKEW_ALLOWANCE_MS:
        return TokenCheck.bad(InvalidReason.CLOCK_SKEW)
    age = now_ms - minted_at
    if age > max_age_ms:
        return TokenCheck.bad(InvalidReason.EXPIRED)
    return TokenCheck.ok(max(age, 0))


def build_cookie(token: str, config: "GatewayConfig") -> str:
    """Set-Cookie value: HttpOnly, Secure, SameSite=Lax, Path=/, bounded age.

    Secure is dropped only in the plaintext dev mode — clients honoring the
    attribute would otherwise never send the cookie back over http.
    """
    max_age_s = config.token_max_age_hours * 3600
    secure = "" if getattr(config, "unsafe_no_tls", False) else " Secure;"
    return (
        f"{config.cookie_name}={token}; Path=/; Max-Age={max_age_s}; "
        f"HttpOnly;{secure} SameSite=Lax"
    )
