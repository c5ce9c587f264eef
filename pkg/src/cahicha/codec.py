"""Byte-exact codecs for the WebAuthn registration wire formats.

Layouts follow the W3C Web Authentication wire definitions
(https://www.w3.org/TR/webauthn-2/#sctn-authenticator-data):

    authenticator data = rpIdHash (32) || flags (1) || signCount (4, BE)
                         || [attested credential data, iff flags.AT]
                         || [extensions CBOR, iff flags.ED]
    attested credential data = aaguid (16) || credIdLen (2, BE)
                               || credentialId || credentialPublicKey (COSE)

Everything here is a pure function over immutable bytes; raw inputs are
preserved verbatim wherever a downstream hash or signature covers them.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import re
import struct
from dataclasses import dataclass
from typing import Optional

from . import cbor
from .cbor import MalformedCbor
from .cose import CosePublicKey, decode_cose_key

CEREMONY_CREATE = "webauthn.create"
SUPPORTED_ATTESTATION_FORMATS = ("packed", "none")

FLAG_UP = 0x01
FLAG_UV = 0x04
FLAG_AT = 0x40
FLAG_ED = 0x80

_B64URL_RE = re.compile(r"^[A-Za-z0-9_-]*$")


class MalformedEncoding(ValueError):
    pass


class TruncatedInput(ValueError):
    pass


class MalformedCredentialData(ValueError):
    pass


class MalformedClientData(ValueError):
    pass


class WrongCeremonyType(ValueError):
    pass


class UnsupportedFormat(ValueError):
    pass


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def encode_base64url(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def decode_base64url(text: str) -> bytes:
    """Decode URL-safe base64, padding optional, strict alphabet."""
    stripped = text.rstrip("=")
    if not _B64URL_RE.match(stripped):
        raise MalformedEncoding("character outside the base64url alphabet")
    if len(stripped) % 4 == 1:
        raise MalformedEncoding("impossible base64url length")
    padded = stripped + "=" * (-len(stripped) % 4)
    try:
        return base64.urlsafe_b64decode(padded.encode("ascii"))
    except (binascii.Error, ValueError) as exc:
        raise MalformedEncoding(str(exc)) from exc


@dataclass(frozen=True)
class FlagSet:
    """The authenticator-data flags byte, bit 0 = UP, bit 2 = UV."""

    up: bool
    uv: bool
    at: bool
    ed: bool
    raw: int

    @classmethod
    def from_byte(cls, raw: int) -> "FlagSet":
        return cls(
            up=bool(raw & FLAG_UP),
            uv=bool(raw & FLAG_UV),
            at=bool(raw & FLAG_AT),
            ed=bool(raw & FLAG_ED),
            raw=raw,
        )

    @classmethod
    def build(cls, up: bool = False, uv: bool = False, at: bool = False, ed: bool = False) -> "FlagSet":
        raw = (FLAG_UP if up else 0) | (FLAG_UV if uv else 0) | (FLAG_AT if at else 0) | (FLAG_ED if ed else 0)
        return cls(up=up, uv=uv, at=at, ed=ed, raw=raw)


def parse_flags(raw: int) -> FlagSet:
    return FlagSet.from_byte(raw)


@dataclass(frozen=True)
class AttestedCredentialData:
    aaguid: bytes
    credential_id: bytes
    public_key: CosePublicKey
    public_key_bytes: bytes  # COSE map verbatim, for byte-exact reserialization

    def serialize(self) -> bytes:
        return (
            self.aaguid
            + struct.pack(">H", len(self.credential_id))
            + self.credential_id
            + self.public_key_bytes
        )


@dataclass(frozen=True)
class AuthenticatorData:
    rp_id_hash: bytes
    flags: FlagSet
    sign_count: int
    attested_credential: Optional[AttestedCredentialData]
    extensions_present: bool
    extension_bytes: bytes = b""

    def serialize(self) -> bytes:
        out = self.rp_id_hash + bytes([self.flags.raw]) + struct.pack(">I", self.sign_count)
        if self.attested_credential is not None:
            out += self.attested_credential.serialize()
        return out + self.extension_bytes


def parse_authenticator_data(data: bytes) -> AuthenticatorData:
    if len(data) < 37:
        raise TruncatedInput(f"authenticator data is {len(data)} bytes, need >= 37")
    rp_id_hash = data[:32]
    flags = FlagSet.from_byte(data[32])
    (sign_count,) = struct.unpack(">I", data[33:37])
    offset = 37

    attested = None
    if flags.at:
        if len(data) < offset + 18:
            raise TruncatedInput("attested credential data header overruns buffer")
        aaguid = data[offset : offset + 16]
        (cred_len,) = struct.unpack(">H", data[offset + 16 : offset + 18])
        offset += 18
        if len(data) < offset + cred_len:
            raise TruncatedInput("declared credential id length overruns buffer")
        credential_id = data[offset : offset + cred_len]
        offset += cred_len
        try:
            key_map, key_end = cbor.decode_prefix(data, offset)
        except MalformedCbor as exc:
            raise MalformedCredentialData(f"credential public key: {exc}") from exc
        if not isinstance(key_map, dict):
            raise MalformedCredentialData("credential public key is not a CBOR map")
        attested = AttestedCredentialData(
            aaguid=aaguid,
            credential_id=credential_id,
            public_key=decode_cose_key(key_map),
            public_key_bytes=bytes(data[offset:key_end]),
        )
        offset = key_end

    extension_bytes = bytes(data[offset:])
    if extension_bytes and not flags.ed:
        raise MalformedCredentialData(
            f"{len(extension_bytes)} trailing bytes but the ED flag is clear"
        )
    return AuthenticatorData(
        rp_id_hash=rp_id_hash,
        flags=flags,
        sign_count=sign_count,
        attested_credential=attested,
        extensions_present=flags.ed,
        extension_bytes=extension_bytes,
    )


@dataclass(frozen=True)
class ClientData:
    ceremony_type: str
    challenge: str
    origin: str
    raw_bytes: bytes


def parse_client_data(data: bytes) -> ClientData:
    """Extract type/challenge/origin; raw bytes are kept for hashing.

    The client-data hash downstream is always SHA-256 over these exact
    bytes — the JSON is never re-serialized. Extra keys (crossOrigin and
    friends, which real browsers add) are tolerated.
    """
    try:
        parsed = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedClientData(str(exc)) from exc
    if not isinstance(parsed, dict):
        raise MalformedClientData("client data JSON is not an object")
    missing = [k for k in ("type", "challenge", "origin") if not isinstance(parsed.get(k), str)]
    if missing:
        raise MalformedClientData(f"missing or non-string fields: {', '.join(missing)}")
    if parsed["type"] != CEREMONY_CREATE:
        raise WrongCeremonyType(f"expected {CEREMONY_CREATE!r}, got {parsed['type']!r}")
    return ClientData(
        ceremony_type=parsed["type"],
        challenge=parsed["challenge"],
        origin=parsed["origin"],
        raw_bytes=bytes(data),
    )


@dataclass(frozen=True)
class AttestationObject:
    format: str
    attestation_statement: dict
    auth_data_bytes: bytes
    auth_data: AuthenticatorData


def decode_attestation_object(data: bytes) -> AttestationObject:
    decoded = cbor.loads(data)
    if not isinstance(decoded, dict):
        raise MalformedCbor("attestation object is not a CBOR map")
    fmt = decoded.get("fmt")
    statement = decoded.get("attStmt")
    auth_data_bytes = decoded.get("authData")
    if not isinstance(fmt, str) or not isinstance(statement, dict) or not isinstance(auth_data_bytes, bytes):
        raise MalformedCbor("attestation object must carry fmt, attStmt and authData")
    if fmt not in SUPPORTED_ATTESTATION_FORMATS:
        raise UnsupportedFormat(f"attestation format {fmt!r} not supported")
    if fmt == "none" and statement:
        raise MalformedCbor('format "none" requires an empty attestation statement')
    if fmt == "packed":
        if not isinstance(statement.get("sig"), bytes):
            raise MalformedCbor('format "packed" requires a signature field')
        if not isinstance(statement.get("alg"), int):
            raise MalformedCbor('format "packed" requires an algorithm identifier')
    auth_data = parse_authenticator_data(auth_data_bytes)
    return AttestationObject(
        format=fmt,
        attestation_statement=statement,
        auth_data_bytes=auth_data_bytes,
        auth_data=auth_data,
    )


def encode_attestation_object(fmt: str, statement: dict, auth_data_bytes: bytes) -> bytes:
    return cbor.dumps({"fmt": fmt, "attStmt": statement, "authData": auth_data_bytes})
