"""COSE public keys for attestation verification.

Integer labels per the IANA COSE registry
(https://www.iana.org/assignments/cose/cose.xhtml): 1=kty, 3=alg,
and for EC2 keys -1=crv, -2=x, -3=y; for RSA keys -1=n, -2=e.

Supported algorithms: ES256 (-7, mandatory baseline) and RS256 (-257).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec, rsa
from cryptography.hazmat.primitives.asymmetric.padding import PKCS1v15

KTY_OKP = 1
KTY_EC2 = 2
KTY_RSA = 3
CRV_P256 = 1
ALG_ES256 = -7
ALG_RS256 = -257
SUPPORTED_ALGORITHMS = (ALG_ES256, ALG_RS256)

LABEL_KTY = 1
LABEL_ALG = 3
LABEL_CRV = -1
LABEL_X = -2
LABEL_Y = -3
LABEL_RSA_N = -1
LABEL_RSA_E = -2


class UnsupportedAlgorithm(ValueError):
    pass


class MalformedKey(ValueError):
    pass


@dataclass(frozen=True)
class CosePublicKey:
    """A verification key decoded from a COSE map."""

    key_type: str  # "EC2" or "RSA"
    algorithm: int
    _key: Union[ec.EllipticCurvePublicKey, rsa.RSAPublicKey] = field(repr=False)

    def verify(self, signature: bytes, message: bytes) -> bool:
        """True iff signature is valid over message under this key."""
        try:
            if self.key_type == "EC2":
                self._key.verify(signature, message, ec.ECDSA(hashes.SHA256()))
            else:
                self._key.verify(signature, message, PKCS1v15(), hashes.SHA256())
            return True
        except (InvalidSignature, ValueError):
            return False

    def to_cose_map(self) -> dict:
        if self.key_type == "EC2":
            numbers = self._key.public_numbers()
            return {
                LABEL_KTY: KTY_EC2,
                LABEL_ALG: self.algorithm,
                LABEL_CRV: CRV_P256,
                LABEL_X: numbers.x.to_bytes(32, "big"),
                LABEL_Y: numbers.y.to_bytes(32, "big"),
            }
        numbers = self._key.public_numbers()
        n_len = (numbers.n.bit_length() + 7) // 8
        e_len = (numbers.e.bit_length() + 7) // 8
        return {
            LABEL_KTY: KTY_RSA,
            LABEL_ALG: self.algorithm,
            LABEL_RSA_N: numbers.n.to_bytes(n_len, "big"),
            LABEL_RSA_E: numbers.e.to_bytes(e_len, "big"),
        }

    @classmethod
    def from_cryptography(cls, key, algorithm: int) -> "CosePublicKey":
        if isinstance(key, ec.EllipticCurvePublicKey):
            return cls(key_type="EC2", algorithm=algorithm, _key=key)
        if isinstance(key, rsa.RSAPublicKey):
            return cls(key_type="RSA", algorithm=algorithm, _key=key)
        raise UnsupportedAlgorithm(f"unsupported key object {type(key).__name__}")


def decode_cose_key(cose_map: dict) -> CosePublicKey:
    kty = cose_map.get(LABEL_KTY)
    alg = cose_map.get(LABEL_ALG)
    if not isinstance(kty, int) or not isinstance(alg, int):
        raise MalformedKey("kty and alg labels are required integers")
    if alg not in SUPPORTED_ALGORITHMS:
        raise UnsupportedAlgorithm(f"COSE algorithm {alg} not supported")

    if kty == KTY_EC2:
        if alg != ALG_ES256:
            raise UnsupportedAlgorithm(f"EC2 key with algorithm {alg}")
        if cose_map.get(LABEL_CRV) != CRV_P256:
            raise UnsupportedAlgorithm(f"EC2 curve {cose_map.get(LABEL_CRV)!r} not supported")
        x = cose_map.get(LABEL_X)
        y = cose_map.get(LABEL_Y)
        if not isinstance(x, bytes) or not isinstance(y, bytes):
            raise MalformedKey("EC2 key requires x and y byte strings")
        if len(x) != 32 or len(y) != 32:
            raise MalformedKey(f"P-256 coordinates must be 32 bytes, got {len(x)}/{len(y)}")
        try:
            key = ec.EllipticCurvePublicNumbers(
                int.from_bytes(x, "big"), int.from_bytes(y, "big"), ec.SECP256R1()
            ).public_key()
        except ValueError as exc:
            raise MalformedKey(f"point not on P-256: {exc}") from exc
        return CosePublicKey(key_type="EC2", algorithm=alg, _key=key)

    if kty == KTY_RSA:
        if alg != ALG_RS256:
            raise UnsupportedAlgorithm(f"RSA key with algorithm {alg}")
        n = cose_map.get(LABEL_RSA_N)
        e = cose_map.get(LABEL_RSA_E)
        if not isinstance(n, bytes) or not isinstance(e, bytes) or not n or not e:
            raise MalformedKey("RSA key requires n and e byte strings")
        try:
            key = rsa.RSAPublicNumbers(
                int.from_bytes(e, "big"), int.from_bytes(n, "big")
            ).public_key()
        except ValueError as exc:
            raise MalformedKey(f"invalid RSA public numbers: {exc}") from exc
        return CosePublicKey(key_type="RSA", algorithm=alg, _key=key)

    raise UnsupportedAlgorithm(f"COSE key type {kty} not supported")
