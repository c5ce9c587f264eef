"""Offline trust store built from a FIDO Metadata Service v3 blob.

The blob is a compact-serialized signed token (header.payload.signature,
each segment base64url) whose header carries the signer's certificate
chain. Ingestion verifies that chain up to an operator-supplied root and
the token signature before any entry is trusted; a tampered blob never
yields a store. No network I/O happens here — bytes in, store out.
"""

from __future__ import annotations

import datetime
import enum
import json
import logging
import time
import uuid
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Union

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec, rsa
from cryptography.hazmat.primitives.asymmetric.padding import PKCS1v15
from cryptography.hazmat.primitives.asymmetric.utils import encode_dss_signature

from .codec import MalformedEncoding, decode_base64url, sha256

logger = logging.getLogger(__name__)


class MalformedBlob(ValueError):
    pass


class BadBlobSignature(ValueError):
    pass


class ExpiredBlob(ValueError):
    pass


class EntryStatus(enum.Enum):
    CERTIFIED = "Certified"
    REVOKED = "Revoked"
    OTHER = "Other"


@dataclass(frozen=True)
class MetadataEntry:
    aaguid: bytes
    description: str
    attestation_root_certificates: List[bytes]  # DER
    status: EntryStatus


@dataclass(frozen=True)
class ChainValidation:
    ok: bool
    reason: str

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class TrustStore:
    entries: Dict[bytes, MetadataEntry]
    loaded_at: float
    source_digest: bytes

    def lookup(self, aaguid: bytes) -> Optional[MetadataEntry]:
        return self.entries.get(aaguid)

    def __len__(self) -> int:
        return len(self.entries)


def _load_cert(der: bytes) -> x509.Certificate:
    try:
        return x509.load_der_x509_certificate(der)
    except ValueError as exc:
        raise MalformedBlob(f"undecodable certificate in blob header: {exc}") from exc


def _check_validity(cert: x509.Certificate, now: datetime.datetime) -> bool:
    return cert.not_valid_before_utc <= now <= cert.not_valid_after_utc


def _issued_by(cert: x509.Certificate, issuer: x509.Certificate) -> bool:
    try:
        cert.verify_directly_issued_by(issuer)
        return True
    except Exception:  # invalid signature, name mismatch, or corrupt cert fields
        return False


def _verify_jose_signature(alg: str, leaf: x509.Certificate, signing_input: bytes, signature: bytes) -> None:
    public_key = leaf.public_key()
    try:
        if alg == "ES256":
            if len(signature) != 64 or not isinstance(public_key, ec.EllipticCurvePublicKey):
                raise InvalidSignature
            der = encode_dss_signature(
                int.from_bytes(signature[:32], "big"), int.from_bytes(signature[32:], "big")
            )
            public_key.verify(der, signing_input, ec.ECDSA(hashes.SHA256()))
        elif alg == "RS256":
            if not isinstance(public_key, rsa.RSAPublicKey):
                raise InvalidSignature
            public_key.verify(signature, signing_input, PKCS1v15(), hashes.SHA256())
        else:
            raise MalformedBlob(f"unsupported blob signature algorithm {alg!r}")
    except InvalidSignature as exc:
        raise BadBlobSignature("blob signature does not verify under the header chain") from exc


def _entry_status(reports: Sequence[dict]) -> EntryStatus:
    statuses = [r.get("status", "") for r in reports if isinstance(r, dict)]
    if any(s == "REVOKED" for s in statuses):
        return EntryStatus.REVOKED
    if any(isinstance(s, str) and s.startswith("FIDO_CERTIFIED") for s in statuses):
        return EntryStatus.CERTIFIED
    return EntryStatus.OTHER


def _parse_entry(raw: dict) -> Optional[MetadataEntry]:
    aaguid_str = raw.get("aaguid")
    if not isinstance(aaguid_str, str):
        return None  # NFC/USB-only U2F entries carry no aaguid; skip them
    try:
        aaguid = uuid.UUID(aaguid_str).bytes
    except ValueError as exc:
        raise MalformedBlob(f"invalid aaguid {aaguid_str!r}") from exc
    statement = raw.get("metadataStatement") or {}
    roots: List[bytes] = []
    for encoded in statement.get("attestationRootCertificates", []):
        try:
            roots.append(decode_base64url(encoded))
        except MalformedEncoding as exc:
            raise MalformedBlob(f"undecodable root certificate in entry {aaguid_str}") from exc
    return MetadataEntry(
        aaguid=aaguid,
        description=statement.get("description", ""),
        attestation_root_certificates=roots,
        status=_entry_status(raw.get("statusReports", [])),
    )


def load_mds_blob(
    blob_bytes: bytes,
    root_certificate: Union[bytes, x509.Certificate],
    *,
    now: Optional[datetime.datetime] = None,
    reject_expired: bool = False,
) -> TrustStore:
    """Verify and ingest a metadata blob, returning an immutable store.

    root_certificate is the trust anchor (DER or PEM bytes, or a parsed
    certificate). A blob whose nextUpdate lies in the past is loaded with
    a warning by default; set reject_expired to refuse it instead.
    """
    if now is None:
        now = datetime.datetime.now(datetime.timezone.utc)
    if isinstance(root_certificate, x509.Certificate):
        root = root_certificate
    else:
        try:
            if root_certificate.lstrip().startswith(b"-----BEGIN"):
                root = x509.load_pem_x509_certificate(root_certificate)
            else:
                root = x509.load_der_x509_certificate(root_certificate)
        except ValueError as exc:
            raise MalformedBlob(f"undecodable root certificate: {exc}") from exc

    try:
        segments = blob_bytes.decode("ascii").split(".")
    except UnicodeDecodeError as exc:
        raise MalformedBlob("blob is not ASCII compact serialization") from exc
    if len(segments) != 3:
        raise MalformedBlob(f"expected 3 blob segments, got {len(segments)}")
    try:
        header_raw = decode_base64url(segments[0])
        payload_raw = decode_base64url(segments[1])
        signature = decode_base64url(segments[2])
    except MalformedEncoding as exc:
        raise MalformedBlob(f"undecodable blob segment: {exc}") from exc

    try:
        header = json.loads(header_raw)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedBlob(f"undecodable blob header: {exc}") from exc
    chain_b64 = header.get("x5c")
    if not isinstance(chain_b64, list) or not chain_b64:
        raise MalformedBlob("blob header carries no certificate chain")
    try:
        chain = [_load_cert(decode_base64url(item)) for item in chain_b64]
    except MalformedEncoding as exc:
        raise MalformedBlob(f"undecodable chain certificate: {exc}") from exc

    # chain: leaf first, each issued by the next, the last by the root
    for cert, issuer in zip(chain, chain[1:] + [root]):
        if not _check_validity(cert, now):
            raise BadBlobSignature(f"certificate {cert.subject.rfc4514_string()} outside validity window")
        if not _issued_by(cert, issuer):
            raise BadBlobSignature("blob header chain does not reach the trusted root")

    signing_input = f"{segments[0]}.{segments[1]}".encode("ascii")
    _verify_jose_signature(header.get("alg", ""), chain[0], signing_input, signature)

    try:
        payload = json.loads(payload_raw)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedBlob(f"undecodable blob payload: {exc}") from exc
    raw_entries = payload.get("entries")
    if not isinstance(raw_entries, list):
        raise MalformedBlob("blob payload carries no entries list")

    next_update = payload.get("nextUpdate")
    if isinstance(next_update, str):
        try:
            update_date = datetime.date.fromisoformat(next_update)
        except ValueError as exc:
            raise MalformedBlob(f"invalid nextUpdate date {next_update!r}") from exc
        if update_date < now.date():
            if reject_expired:
                raise ExpiredBlob(f"blob nextUpdate {next_update} is in the past")
            logger.warning("metadata blob is stale (nextUpdate %s); loading anyway", next_update)

    entries: Dict[bytes, MetadataEntry] = {}
    for raw in raw_entries:
        entry = _parse_entry(raw)
        if entry is not None:
            entries[entry.aaguid] = entry
    return TrustStore(entries=entries, loaded_at=time.time(), source_digest=sha256(blob_bytes))


def validate_attestation_chain(
    x5c: Sequence[bytes],
    aaguid: bytes,
    store: TrustStore,
    *,
    now: Optional[datetime.datetime] = None,
) -> ChainValidation:
    """True iff the chain reaches a registered, non-revoked root for aaguid.

    All failures come back as a falsy result with a diagnostic reason;
    nothing raises.
    """
    if now is None:
        now = datetime.datetime.now(datetime.timezone.utc)
    if not x5c:
        return ChainValidation(False, "empty certificate chain")
    entry = store.lookup(aaguid)
    if entry is None:
        return ChainValidation(False, f"aaguid {aaguid.hex()} not in trust store")
    if entry.status is EntryStatus.REVOKED:
        return ChainValidation(False, f"entry {entry.description!r} is revoked")
    if not entry.attestation_root_certificates:
        return ChainValidation(False, f"entry {entry.description!r} registers no roots")

    try:
        chain = [x509.load_der_x509_certificate(der) for der in x5c]
        roots = [x509.load_der_x509_certificate(der) for der in entry.attestation_root_certificates]
    except ValueError as exc:
        return ChainValidation(False, f"undecodable certificate: {exc}")

    try:
        for cert in chain:
            if not _check_validity(cert, now):
                return ChainValidation(False, f"{cert.subject.rfc4514_string()} outside validity window")
        for cert, issuer in zip(chain, chain[1:]):
            if not _issued_by(cert, issuer):
                return ChainValidation(False, "broken issuer link inside attestation chain")

        last = chain[-1]
        for root in roots:
            if last == root:
                return ChainValidation(True, "chain terminates at a registered root")
            if _check_validity(root, now) and _issued_by(last, root):
                return ChainValidation(True, "chain verified up to a registered root")
    except Exception as exc:  # lazily parsed fields of a corrupt certificate
        return ChainValidation(False, f"undecodable certificate field: {exc}")
    return ChainValidation(False, "chain does not reach any registered root")
