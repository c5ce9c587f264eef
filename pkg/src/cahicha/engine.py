"""Challenge issuance and the attestation verification pipeline.

A client proves humanity by completing one credential-creation ceremony
against a single-use challenge. Verification runs a fixed sequence of
checks and reports the earliest failure:

    1. client data: ceremony type, origin allow-list
    2. challenge binding: stored record matches, unexpired, unconsumed
       (consumed atomically — the replay protection)
    3. authenticator data: RP ID hash, UP flag, UV flag per policy
    4. signature over authenticatorData || clientDataHash
    5. Strict mode only: attestation chain vetted against the trust store

Nothing here authenticates an identity: the credential is discarded after
the verdict. The only shared state is the challenge store, whose consume
operation is a single atomic check-and-set.
"""

from __future__ import annotations

import enum
import secrets
import threading
import time
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from cryptography import exceptions as crypto_exceptions
from cryptography import x509

from . import codec
from .cbor import MalformedCbor
from .codec import (
    AttestationObject,
    MalformedClientData,
    MalformedCredentialData,
    MalformedEncoding,
    TruncatedInput,
    UnsupportedFormat,
    WrongCeremonyType,
    decode_base64url,
    encode_base64url,
    sha256,
)
from .cose import ALG_ES256, ALG_RS256, CosePublicKey, MalformedKey, UnsupportedAlgorithm
from .fixtures import OID_FIDO_GEN_CE_AAGUID
from .mds import TrustStore, validate_attestation_chain
from .tokens import EntropyUnavailable

DEFAULT_CHALLENGE_TTL_S = 120
DEFAULT_TIMEOUT_MS = 60_000
_SWEEP_INTERVAL_S = 30.0


class Mode(enum.Enum):
    STRICT = "strict"
    GENERAL = "general"


class Verdict(enum.Enum):
    HUMAN = "Human"
    REJECTED = "Rejected"


class RejectionReason(enum.Enum):
    BAD_SIGNATURE = "BadSignature"
    CHALLENGE_MISMATCH = "ChallengeMismatch"
    CHALLENGE_EXPIRED = "ChallengeExpired"
    CHALLENGE_REPLAYED = "ChallengeReplayed"
    MISSING_USER_PRESENCE = "MissingUserPresence"
    MISSING_USER_VERIFICATION = "MissingUserVerification"
    ORIGIN_MISMATCH = "OriginMismatch"
    RP_ID_MISMATCH = "RpIdMismatch"
    UNTRUSTED_AUTHENTICATOR = "UntrustedAuthenticator"
    MALFORMED = "Malformed"


@dataclass
class ChallengeRecord:
    record_id: str
    challenge: bytes  # 32 bytes of CSPRNG output
    rp_id: str
    issued_at_ms: int
    issued_at_mono: float
    consumed: bool = False


class _ConsumeResult(enum.Enum):
    OK = "ok"
    UNKNOWN = "unknown"
    MISMATCH = "mismatch"
    EXPIRED = "expired"
    REPLAYED = "replayed"


class ChallengeStore:
    """In-memory single-use challenge records with periodic sweep."""

    def __init__(self):
        self._records: Dict[str, ChallengeRecord] = {}
        self._lock = threading.Lock()
        self._last_sweep = time.monotonic()

    def add(self, record: ChallengeRecord) -> None:
        with self._lock:
            self._records[record.record_id] = record

    def consume(self, record_id: str, challenge: bytes, now_ms: int, ttl_ms: int) -> _ConsumeResult:
        """Atomic check-and-set: at most one OK per record, ever."""
        with self._lock:
            record = self._records.get(record_id)
            if record is None:
                return _ConsumeResult.UNKNOWN
            if record.challenge != challenge:
                # not an answer to this record; leave it answerable
                return _ConsumeResult.MISMATCH
            if now_ms - record.issued_at_ms > ttl_ms:
                del self._records[record_id]
                return _ConsumeResult.EXPIRED
            if record.consumed:
                return _ConsumeResult.REPLAYED
            record.consumed = True
            return _ConsumeResult.OK

    def sweep(self, now_ms: int, ttl_ms: int) -> None:
        mono = time.monotonic()
        with self._lock:
            if mono - self._last_sweep < _SWEEP_INTERVAL_S:
                return
            self._last_sweep = mono
            stale = [
                rid
                for rid, rec in self._records.items()
                if rec.consumed or now_ms - rec.issued_at_ms > ttl_ms
            ]
            for rid in stale:
                del self._records[rid]

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


@dataclass(frozen=True)
class VerificationPolicy:
    mode: Mode = Mode.GENERAL
    expected_origins: Tuple[str, ...] = ()
    rp_id: str = "localhost"
    require_uv: Optional[bool] = None  # None: Strict enforces UV, General does not
    challenge_ttl_s: int = DEFAULT_CHALLENGE_TTL_S
    advertise_uv: str = "required"  # what issued options ask of the authenticator

    @property
    def uv_enforced(self) -> bool:
        if self.require_uv is not None:
            return self.require_uv
        return self.mode is Mode.STRICT


@dataclass(frozen=True)
class CreationOptions:
    record_id: str
    challenge: str  # base64url of the record's 32 bytes
    rp_id: str
    rp_name: str
    user_id: bytes  # random ephemeral handle, no account behind it
    user_name: str
    user_display_name: str
    pub_key_cred_params: Tuple[int, ...]
    user_verification: str
    attestation: str
    timeout_ms: int

    def to_wire(self) -> dict:
        return {
            "record_id": self.record_id,
            "publicKey": {
                "challenge": self.challenge,
                "rp": {"id": self.rp_id, "name": self.rp_name},
                "user": {
                    "id": encode_base64url(self.user_id),
                    "name": self.user_name,
                    "displayName": self.user_display_name,
                },
                "pubKeyCredParams": [
                    {"type": "public-key", "alg": alg} for alg in self.pub_key_cred_params
                ],
                "authenticatorSelection": {"userVerification": self.user_verification},
                "attestation": self.attestation,
                "timeout": self.timeout_ms,
            },
        }


@dataclass(frozen=True)
class AttestationResponse:
    """The client-submitted ceremony result."""

    record_id: str
    attestation_object: bytes
    client_data: bytes


@dataclass(frozen=True)
class VerificationOutcome:
    verdict: Verdict
    rejection_reason: Optional[RejectionReason] = None
    aaguid: Optional[bytes] = None
    attestation_format: Optional[str] = None
    sign_count: Optional[int] = None
    detail: str = ""

    @property
    def is_human(self) -> bool:
        return self.verdict is Verdict.HUMAN


def _rejected(reason: RejectionReason, detail: str = "", **extra) -> VerificationOutcome:
    return VerificationOutcome(verdict=Verdict.REJECTED, rejection_reason=reason, detail=detail, **extra)


def verify_signature(
    auth_data_bytes: bytes,
    client_data_hash: bytes,
    signature: bytes,
    key: CosePublicKey,
) -> bool:
    """True iff signature covers auth_data_bytes || client_data_hash."""
    if key.algorithm not in (ALG_ES256, ALG_RS256):
        raise UnsupportedAlgorithm(f"algorithm {key.algorithm} not supported")
    return key.verify(signature, auth_data_bytes + client_data_hash)


def _certificate_aaguid(cert: x509.Certificate) -> Optional[bytes]:
    try:
        extension = cert.extensions.get_extension_for_oid(OID_FIDO_GEN_CE_AAGUID)
    except (x509.ExtensionNotFound, ValueError):
        return None
    value = extension.value.value if isinstance(extension.value, x509.UnrecognizedExtension) else None
    # DER OCTET STRING: 0x04, length 0x10, 16 aaguid bytes
    if isinstance(value, bytes) and len(value) == 18 and value[:2] == b"\x04\x10":
        return value[2:]
    return None


class VerificationEngine:
    """Issues challenges and runs the verification pipeline for one policy."""

    def __init__(self, policy: VerificationPolicy, trust_store: Optional[TrustStore] = None):
        if policy.mode is Mode.STRICT and trust_store is None:
            raise ValueError("strict mode requires a loaded trust store; refusing to start")
        self.policy = policy
        self.trust_store = trust_store
        self._store = ChallengeStore()

    # -- challenge issuance -------------------------------------------------

    def issue_challenge(self, now_ms: Optional[int] = None) -> Tuple[ChallengeRecord, CreationOptions]:
        if now_ms is None:
            now_ms = int(time.time() * 1000)
        try:
            challenge = secrets.token_bytes(32)
            user_id = secrets.token_bytes(16)
            record_id = secrets.token_hex(16)
        except NotImplementedError as exc:
            raise EntropyUnavailable(str(exc)) from exc
        record = ChallengeRecord(
            record_id=record_id,
            challenge=challenge,
            rp_id=self.policy.rp_id,
            issued_at_ms=now_ms,
            issued_at_mono=time.monotonic(),
        )
        self._store.add(record)
        self._store.sweep(now_ms, self.policy.challenge_ttl_s * 1000)
        options = CreationOptions(
            record_id=record_id,
            challenge=encode_base64url(challenge),
            rp_id=self.policy.rp_id,
            rp_name=self.policy.rp_id,
            user_id=user_id,
            user_name="visitor",
            user_display_name="Visitor",
            pub_key_cred_params=(ALG_ES256, ALG_RS256),
            user_verification=self.policy.advertise_uv,
            attestation="direct",
            timeout_ms=DEFAULT_TIMEOUT_MS,
        )
        return record, options

    # -- verification pipeline ----------------------------------------------

    def verify_attestation(
        self, response: AttestationResponse, now_ms: Optional[int] = None
    ) -> VerificationOutcome:
        if now_ms is None:
            now_ms = int(time.time() * 1000)

        # 1. client data: ceremony type and origin
        try:
            client_data = codec.parse_client_data(response.client_data)
        except (MalformedClientData, WrongCeremonyType) as exc:
            return _rejected(RejectionReason.MALFORMED, str(exc))
        if client_data.origin not in self.policy.expected_origins:
            return _rejected(
                RejectionReason.ORIGIN_MISMATCH,
                f"origin {client_data.origin!r} not among expected origins",
            )

        # 2. challenge binding and replay protection
        try:
            submitted_challenge = decode_base64url(client_data.challenge)
        except MalformedEncoding as exc:
            return _rejected(RejectionReason.MALFORMED, f"challenge encoding: {exc}")
        consume = self._store.consume(
            response.record_id,
            submitted_challenge,
            now_ms,
            self.policy.challenge_ttl_s * 1000,
        )
        if consume is _ConsumeResult.UNKNOWN or consume is _ConsumeResult.MISMATCH:
            return _rejected(RejectionReason.CHALLENGE_MISMATCH, "challenge does not answer a held record")
        if consume is _ConsumeResult.EXPIRED:
            return _rejected(RejectionReason.CHALLENGE_EXPIRED, "challenge record is past its ttl")
        if consume is _ConsumeResult.REPLAYED:
            return _rejected(RejectionReason.CHALLENGE_REPLAYED, "challenge record already consumed")

        # 3. authenticator data evaluation
        try:
            attestation = codec.decode_attestation_object(response.attestation_object)
        except (MalformedCbor, UnsupportedFormat, TruncatedInput, MalformedCredentialData,
                MalformedKey, UnsupportedAlgorithm) as exc:
            return _rejected(RejectionReason.MALFORMED, str(exc))
        auth_data = attestation.auth_data
        diagnostics = {
            "attestation_format": attestation.format,
            "sign_count": auth_data.sign_count,
        }
        if auth_data.rp_id_hash != sha256(self.policy.rp_id.encode("utf-8")):
            return _rejected(RejectionReason.RP_ID_MISMATCH, "rp id hash mismatch", **diagnostics)
        if not auth_data.flags.up:
            return _rejected(
                RejectionReason.MISSING_USER_PRESENCE, "UP flag (bit 0) not set", **diagnostics
            )
        if self.policy.uv_enforced and not auth_data.flags.uv:
            return _rejected(
                RejectionReason.MISSING_USER_VERIFICATION, "UV flag (bit 2) not set", **diagnostics
            )
        if auth_data.attested_credential is None:
            return _rejected(
                RejectionReason.MALFORMED, "no attested credential in creation response", **diagnostics
            )
        diagnostics["aaguid"] = auth_data.attested_credential.aaguid

        # 4. signature over authenticatorData || clientDataHash
        client_data_hash = sha256(client_data.raw_bytes)
        outcome = self._check_signature(attestation, client_data_hash, diagnostics)
        if outcome is not None:
            return outcome

        # 5. authenticator trustworthiness (Strict mode only)
        if self.policy.mode is Mode.STRICT:
            outcome = self._check_trust(attestation, diagnostics)
            if outcome is not None:
                return outcome

        return VerificationOutcome(verdict=Verdict.HUMAN, **diagnostics)

    def _check_signature(
        self, attestation: AttestationObject, client_data_hash: bytes, diagnostics: dict
    ) -> Optional[VerificationOutcome]:
        if attestation.format == "none":
            return None  # nothing to verify by definition; Strict rejects in step 5
        statement = attestation.attestation_statement
        signature = statement["sig"]
        alg = statement["alg"]
        x5c = statement.get("x5c")
        if x5c is not None:
            if not isinstance(x5c, list) or not all(isinstance(c, bytes) for c in x5c) or not x5c:
                return _rejected(RejectionReason.MALFORMED, "x5c is not a certificate list", **diagnostics)
            try:
                leaf = x509.load_der_x509_certificate(x5c[0])
            except ValueError as exc:
                return _rejected(RejectionReason.MALFORMED, f"undecodable leaf certificate: {exc}", **diagnostics)
            cert_aaguid = _certificate_aaguid(leaf)
            if cert_aaguid is not None and cert_aaguid != diagnostics["aaguid"]:
                return _rejected(
                    RejectionReason.BAD_SIGNATURE,
                    "certificate aaguid extension contradicts authenticator data",
                    **diagnostics,
                )
            try:
                # public_key() parses lazily; corrupt SPKI surfaces here
                key = CosePublicKey.from_cryptography(leaf.public_key(), alg)
            except (UnsupportedAlgorithm, ValueError, crypto_exceptions.UnsupportedAlgorithm) as exc:
                return _rejected(RejectionReason.MALFORMED, str(exc), **diagnostics)
        else:
            key = attestation.auth_data.attested_credential.public_key
            if alg != key.algorithm:
                return _rejected(
                    RejectionReason.BAD_SIGNATURE,
                    f"statement algorithm {alg} contradicts credential key {key.algorithm}",
                    **diagnostics,
                )
        try:
            valid = verify_signature(attestation.auth_data_bytes, client_data_hash, signature, key)
        except UnsupportedAlgorithm as exc:
            return _rejected(RejectionReason.MALFORMED, str(exc), **diagnostics)
        if not valid:
            return _rejected(RejectionReason.BAD_SIGNATURE, "signature does not verify", **diagnostics)
        return None

    def _check_trust(
        self, attestation: AttestationObject, diagnostics: dict
    ) -> Optional[VerificationOutcome]:
        x5c = attestation.attestation_statement.get("x5c") if attestation.format == "packed" else None
        if not x5c:
            return _rejected(
                RejectionReason.UNTRUSTED_AUTHENTICATOR,
                "no attestation chain to vet against the metadata store",
                **diagnostics,
            )
        result = validate_attestation_chain(x5c, diagnostics["aaguid"], self.trust_store)
        if not result:
            return _rejected(RejectionReason.UNTRUSTED_AUTHENTICATOR, result.reason, **diagnostics)
        return None

    # -- maintenance ----------------------------------------------------------

    @property
    def pending_challenges(self) -> int:
        return len(self._store)
