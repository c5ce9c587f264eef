"""Software authenticator: the deterministic stand-in for real hardware.

Produces byte-exact creation-ceremony responses directly from creation
options — honest ones by default, and deliberately broken ones through the
behavior knobs (missing presence flag, wrong challenge, foreign origin,
corrupted signature, arbitrary flag bytes). It implements only the
cryptographic duties of an authenticator; transport and user interaction
do not exist at this layer.

Seeded instances derive every key, credential id and signature
deterministically (RFC 6979 signing), so golden fixtures are reproducible
byte for byte.
"""

from __future__ import annotations

import json
import secrets
import struct
from dataclasses import dataclass, field, replace
from typing import List, Optional

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec

from . import cbor
from .codec import FLAG_AT, FLAG_ED, FLAG_UP, FLAG_UV, decode_base64url, encode_base64url, sha256
from .cose import ALG_ES256, CosePublicKey
from .engine import AttestationResponse, CreationOptions
from .fixtures import CertificateAuthority

DEFAULT_AAGUID = bytes.fromhex("cac1c1a0000000000000000000000001")

ATTESTATION_PACKED_X5C = "packed-x5c"
ATTESTATION_PACKED_SELF = "packed-self"
ATTESTATION_NONE = "none"
_FORMATS = (ATTESTATION_PACKED_X5C, ATTESTATION_PACKED_SELF, ATTESTATION_NONE)


class UnsupportedOption(ValueError):
    pass


@dataclass(frozen=True)
class AuthenticatorBehavior:
    """What kind of response to produce; defaults are an honest ceremony."""

    set_up: bool = True
    set_uv: bool = True
    attestation_format: str = ATTESTATION_PACKED_SELF
    aaguid: Optional[bytes] = None  # None: fixture aaguid for x5c, default otherwise
    wrong_challenge: Optional[bytes] = None
    wrong_origin: Optional[str] = None
    corrupt_signature: bool = False
    sign_count_start: int = 0
    flags_override: Optional[int] = None  # verbatim flags byte; AT/ED bits drive layout

    def __post_init__(self):
        if self.attestation_format not in _FORMATS:
            raise ValueError(f"unknown attestation format {self.attestation_format!r}")


HONEST = AuthenticatorBehavior()


@dataclass(frozen=True)
class AttestationFixtureKeys:
    """Manufacturer-provisioned attestation key + chain for packed-x5c."""

    attestation_key: ec.EllipticCurvePrivateKey = field(repr=False)
    certificate_chain_der: List[bytes] = field(repr=False)
    aaguid: bytes = DEFAULT_AAGUID

    @classmethod
    def create(
        cls, authority: CertificateAuthority, aaguid: bytes = DEFAULT_AAGUID
    ) -> "AttestationFixtureKeys":
        key, chain = authority.issue_attestation_chain(aaguid)
        return cls(attestation_key=key, certificate_chain_der=chain, aaguid=aaguid)


# group order of secp256r1
_P256_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551


class SoftAuthenticator:
    def __init__(
        self,
        attestation: Optional[AttestationFixtureKeys] = None,
        seed: Optional[int] = None,
    ):
        self.attestation = attestation
        self._seed = seed
        self._counter = 0

    def _random_bytes(self, n: int, label: str) -> bytes:
        if self._seed is None:
            return secrets.token_bytes(n)
        self._counter += 1
        stream = b""
        while len(stream) < n:
            stream += sha256(f"softauth-{self._seed}-{self._counter}-{label}-{len(stream)}".encode())
        return stream[:n]

    def _new_credential_key(self) -> ec.EllipticCurvePrivateKey:
        if self._seed is None:
            return ec.generate_private_key(ec.SECP256R1())
        scalar = int.from_bytes(self._random_bytes(32, "credkey"), "big")
        return ec.derive_private_key(scalar % (_P256_ORDER - 1) + 1, ec.SECP256R1())

    def _sign(self, key: ec.EllipticCurvePrivateKey, message: bytes) -> bytes:
        deterministic = self._seed is not None
        return key.sign(message, ec.ECDSA(hashes.SHA256(), deterministic_signing=deterministic))

    def create_credential(
        self,
        options: CreationOptions,
        origin: str,
        behavior: AuthenticatorBehavior = HONEST,
    ) -> AttestationResponse:
        """Run one creation ceremony and return the wire-format response."""
        if ALG_ES256 not in options.pub_key_cred_params:
            raise UnsupportedOption("options exclude ES256, the only algorithm this device signs with")

        challenge = (
            encode_base64url(behavior.wrong_challenge)
            if behavior.wrong_challenge is not None
            else options.challenge
        )
        client_data = json.dumps(
            {
                "type": "webauthn.create",
                "challenge": challenge,
                "origin": behavior.wrong_origin if behavior.wrong_origin is not None else origin,
                "crossOrigin": False,
            },
            separators=(",", ":"),
        ).encode("utf-8")

        if behavior.flags_override is not None:
            flags = behavior.flags_override
        else:
            flags = FLAG_AT
            if behavior.set_up:
                flags |= FLAG_UP
            if behavior.set_uv:
                flags |= FLAG_UV

        credential_key = self._new_credential_key()
        auth_data = sha256(options.rp_id.encode("utf-8"))
        auth_data += bytes([flags])
        auth_data += struct.pack(">I", behavior.sign_count_start)
        if flags & FLAG_AT:
            aaguid = behavior.aaguid
            if aaguid is None:
                aaguid = self.attestation.aaguid if self.attestation else DEFAULT_AAGUID
            credential_id = self._random_bytes(32, "credid")
            cose_key = cbor.dumps(
                CosePublicKey.from_cryptography(credential_key.public_key(), ALG_ES256).to_cose_map()
            )
            auth_data += aaguid + struct.pack(">H", len(credential_id)) + credential_id + cose_key
        if flags & FLAG_ED:
            auth_data += cbor.dumps({})  # empty extensions map

        message = auth_data + sha256(client_data)
        if behavior.attestation_format == ATTESTATION_PACKED_X5C:
            if self.attestation is None:
                raise UnsupportedOption("packed-x5c requires provisioned attestation keys")
            signature = self._sign(self.attestation.attestation_key, message)
            statement = {
                "alg": ALG_ES256,
                "sig": signature,
                "x5c": list(self.attestation.certificate_chain_der),
            }
        elif behavior.attestation_format == ATTESTATION_PACKED_SELF:
            signature = self._sign(credential_key, message)
            statement = {"alg": ALG_ES256, "sig": signature}
        else:
            statement = {}

        if behavior.corrupt_signature and "sig" in statement:
            sig = bytearray(statement["sig"])
            sig[-1] ^= 0x01
            statement["sig"] = bytes(sig)

        fmt = "none" if behavior.attestation_format == ATTESTATION_NONE else "packed"
        attestation_object = cbor.dumps({"fmt": fmt, "attStmt": statement, "authData": auth_data})
        return AttestationResponse(
            record_id=options.record_id,
            attestation_object=attestation_object,
            client_data=client_data,
        )


def replay_response(previous: AttestationResponse) -> AttestationResponse:
    """Byte-identical copy of an earlier response, for replay tests."""
    return replace(previous)


def export_response(response: AttestationResponse, path: str) -> None:
    """Write a response as a base64url JSON fixture file."""
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(
            {
                "record_id": response.record_id,
                "attestation_object_b64": encode_base64url(response.attestation_object),
                "client_data_b64": encode_base64url(response.client_data),
            },
            handle,
            indent=2,
        )
        handle.write("\n")


def load_response(path: str) -> AttestationResponse:
    """Read a fixture file written by export_response."""
    with open(path, "r", encoding="utf-8") as handle:
        raw = json.load(handle)
    return AttestationResponse(
        record_id=raw["record_id"],
        attestation_object=decode_base64url(raw["attestation_object_b64"]),
        client_data=decode_base64url(raw["client_data_b64"]),
    )
