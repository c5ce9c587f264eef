"""Self-contained PKI for tests and local deployments.

Builds the pieces an offline deployment needs: a root CA, attestation
certificate chains carrying the FIDO aaguid extension, signed metadata
blobs in the compact three-segment format, and self-signed TLS server
certificates for localhost gateways.

With a seed, private keys are derived deterministically so fixture bytes
are reproducible; without one, keys come from the OS RNG.
"""

from __future__ import annotations

import datetime
import ipaddress
import json
import uuid
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import decode_dss_signature
from cryptography.x509.oid import NameOID

from .codec import encode_base64url, sha256

# id-fido-gen-ce-aaguid, the aaguid certificate extension
OID_FIDO_GEN_CE_AAGUID = x509.ObjectIdentifier("1.3.6.1.4.1.45724.1.1.4")

_BACKDATE = datetime.timedelta(days=1)
_DEFAULT_LIFETIME = datetime.timedelta(days=3650)


# group order of secp256r1, for reducing derived scalars into range
_P256_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551


def _derive_key(seed: Optional[int], index: int) -> ec.EllipticCurvePrivateKey:
    if seed is None:
        return ec.generate_private_key(ec.SECP256R1())
    material = sha256(f"cahicha-fixture-{seed}-{index}".encode("ascii"))
    scalar = int.from_bytes(material, "big")
    return ec.derive_private_key(scalar % (_P256_ORDER - 1) + 1, ec.SECP256R1())


def _name(common_name: str) -> x509.Name:
    return x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])


class CertificateAuthority:
    """A fixture root CA that can issue attestation and signing certs."""

    def __init__(self, common_name: str = "CAHICHA Fixture Root CA", seed: Optional[int] = None):
        self.seed = seed
        self._key_index = 0
        self.key = self._next_key()
        now = datetime.datetime.now(datetime.timezone.utc)
        self.certificate = (
            x509.CertificateBuilder()
            .subject_name(_name(common_name))
            .issuer_name(_name(common_name))
            .public_key(self.key.public_key())
            .serial_number(self._serial())
            .not_valid_before(now - _BACKDATE)
            .not_valid_after(now + _DEFAULT_LIFETIME)
            .add_extension(x509.BasicConstraints(ca=True, path_length=None), critical=True)
            .sign(self.key, hashes.SHA256())
        )

    def _next_key(self) -> ec.EllipticCurvePrivateKey:
        key = _derive_key(self.seed, self._key_index)
        self._key_index += 1
        return key

    def _serial(self) -> int:
        if self.seed is None:
            return x509.random_serial_number()
        self._key_index += 1
        return int.from_bytes(sha256(f"serial-{self.seed}-{self._key_index}".encode())[:8], "big")

    @property
    def certificate_der(self) -> bytes:
        return self.certificate.public_bytes(serialization.Encoding.DER)

    @property
    def certificate_pem(self) -> bytes:
        return self.certificate.public_bytes(serialization.Encoding.PEM)

    def issue(
        self,
        common_name: str,
        public_key,
        *,
        aaguid: Optional[bytes] = None,
        lifetime: datetime.timedelta = _DEFAULT_LIFETIME,
    ) -> x509.Certificate:
        now = datetime.datetime.now(datetime.timezone.utc)
        builder = (
            x509.CertificateBuilder()
            .subject_name(_name(common_name))
            .issuer_name(self.certificate.subject)
            .public_key(public_key)
            .serial_number(self._serial())
            .not_valid_before(now - _BACKDATE)
            .not_valid_after(now + lifetime)
            .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
        )
        if aaguid is not None:
            if len(aaguid) != 16:
                raise ValueError("aaguid must be 16 bytes")
            # extension value is the DER OCTET STRING wrapping the aaguid
            builder = builder.add_extension(
                x509.UnrecognizedExtension(OID_FIDO_GEN_CE_AAGUID, b"\x04\x10" + aaguid),
                critical=False,
            )
        return builder.sign(self.key, hashes.SHA256())

    def issue_attestation_chain(
        self, aaguid: bytes, common_name: str = "CAHICHA Fixture Authenticator"
    ) -> Tuple[ec.EllipticCurvePrivateKey, List[bytes]]:
        """Attestation key + DER chain (leaf first, root excluded)."""
        key = self._next_key()
        cert = self.issue(common_name, key.public_key(), aaguid=aaguid)
        return key, [cert.public_bytes(serialization.Encoding.DER)]


@dataclass(frozen=True)
class MetadataEntrySpec:
    """One authenticator model to register in a fixture metadata blob."""

    aaguid: bytes
    description: str
    root_certificates_der: Sequence[bytes]
    status: str = "FIDO_CERTIFIED_L1"


def _jose_es256_signature(key: ec.EllipticCurvePrivateKey, signing_input: bytes) -> bytes:
    der = key.sign(signing_input, ec.ECDSA(hashes.SHA256(), deterministic_signing=True))
    r, s = decode_dss_signature(der)
    return r.to_bytes(32, "big") + s.to_bytes(32, "big")


def build_mds_blob(
    authority: CertificateAuthority,
    entries: Iterable[MetadataEntrySpec],
    *,
    next_update: Optional[datetime.date] = None,
    serial_number: int = 1,
) -> bytes:
    """Compact-serialized signed metadata blob (header.payload.signature).

    The blob-signing certificate is issued by the authority, whose root is
    the trust anchor handed to the loader.
    """
    signer_key = authority._next_key()
    signer_cert = authority.issue("CAHICHA Fixture MDS Signer", signer_key.public_key())
    if next_update is None:
        next_update = datetime.date.today() + datetime.timedelta(days=30)

    header = {
        "alg": "ES256",
        "typ": "JWT",
        "x5c": [encode_base64url(signer_cert.public_bytes(serialization.Encoding.DER))],
    }
    payload = {
        "legalHeader": "Fixture metadata for offline verification tests.",
        "no": serial_number,
        "nextUpdate": next_update.isoformat(),
        "entries": [
            {
                "aaguid": str(uuid.UUID(bytes=spec.aaguid)),
                "metadataStatement": {
                    "description": spec.description,
                    "attestationRootCertificates": [
                        encode_base64url(der) for der in spec.root_certificates_der
                    ],
                },
                "statusReports": [{"status": spec.status}],
            }
            for spec in entries
        ],
    }
    header_b64 = encode_base64url(json.dumps(header, separators=(",", ":")).encode())
    payload_b64 = encode_base64url(json.dumps(payload, separators=(",", ":")).encode())
    signing_input = f"{header_b64}.{payload_b64}".encode("ascii")
    signature_b64 = encode_base64url(_jose_es256_signature(signer_key, signing_input))
    return f"{header_b64}.{payload_b64}.{signature_b64}".encode("ascii")


def self_signed_server_cert(
    hostnames: Sequence[str] = ("localhost",),
) -> Tuple[bytes, bytes]:
    """(cert_pem, key_pem) for a localhost TLS-dev gateway."""
    key = ec.generate_private_key(ec.SECP256R1())
    now = datetime.datetime.now(datetime.timezone.utc)
    names: List[x509.GeneralName] = [x509.DNSName(h) for h in hostnames]
    names.append(x509.IPAddress(ipaddress.ip_address("127.0.0.1")))
    cert = (
        x509.CertificateBuilder()
        .subject_name(_name(hostnames[0]))
        .issuer_name(_name(hostnames[0]))
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - _BACKDATE)
        .not_valid_after(now + datetime.timedelta(days=365))
        .add_extension(x509.SubjectAlternativeName(names), critical=False)
        .sign(key, hashes.SHA256())
    )
    return (
        cert.public_bytes(serialization.Encoding.PEM),
        key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        ),
    )
