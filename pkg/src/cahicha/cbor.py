"""Definite-length CBOR subset used by the WebAuthn wire formats.

Attestation objects and COSE keys only ever use unsigned/negative integers,
byte strings, text strings, arrays and string-or-int-keyed maps (RFC 8949
major types 0-5, plus the false/true/null simple values). Indefinite lengths,
tags and floats are rejected outright.

Encoding is canonical (CTAP2 rules: minimal-length integers, maps sorted by
encoded key), so encode(decode(x)) is byte-identical for canonical inputs and
fixtures are reproducible.
"""

from __future__ import annotations

import struct
from typing import Any, Tuple


class MalformedCbor(ValueError):
    """Input is not decodable under the supported CBOR subset."""


_FALSE, _TRUE, _NULL = 20, 21, 22


def _read_head(data: bytes, offset: int) -> Tuple[int, int, int]:
    """Return (major_type, argument, next_offset) for the head at offset."""
    if offset >= len(data):
        raise MalformedCbor("truncated item head")
    initial = data[offset]
    major = initial >> 5
    info = initial & 0x1F
    offset += 1
    if info < 24:
        return major, info, offset
    if info == 24:
        width, fmt = 1, ">B"
    elif info == 25:
        width, fmt = 2, ">H"
    elif info == 26:
        width, fmt = 4, ">I"
    elif info == 27:
        width, fmt = 8, ">Q"
    else:
        raise MalformedCbor(f"unsupported additional info {info}")
    if offset + width > len(data):
        raise MalformedCbor("truncated length argument")
    (argument,) = struct.unpack(fmt, data[offset : offset + width])
    return major, argument, offset + width


def decode_prefix(data: bytes, offset: int = 0) -> Tuple[Any, int]:
    """Decode one item starting at offset; return (value, next_offset).

    Used for CBOR embedded mid-stream (the COSE key inside authenticator
    data), where the item's length is only known after decoding it.
    """
    major, argument, offset = _read_head(data, offset)
    if major == 0:
        return argument, offset
    if major == 1:
        return -1 - argument, offset
    if major == 2 or major == 3:
        end = offset + argument
        if end > len(data):
            raise MalformedCbor("string overruns buffer")
        raw = bytes(data[offset:end])
        if major == 2:
            return raw, end
        try:
            return raw.decode("utf-8"), end
        except UnicodeDecodeError as exc:
            raise MalformedCbor("invalid utf-8 in text string") from exc
    if major == 4:
        items = []
        for _ in range(argument):
            value, offset = decode_prefix(data, offset)
            items.append(value)
        return items, offset
    if major == 5:
        result: dict = {}
        for _ in range(argument):
            key, offset = decode_prefix(data, offset)
            if not isinstance(key, (int, str)):
                raise MalformedCbor(f"unsupported map key type {type(key).__name__}")
            if key in result:
                raise MalformedCbor("duplicate map key")
            value, offset = decode_prefix(data, offset)
            result[key] = value
        return result, offset
    if major == 7:
        if argument == _FALSE:
            return False, offset
        if argument == _TRUE:
            return True, offset
        if argument == _NULL:
            return None, offset
        raise MalformedCbor(f"unsupported simple value {argument}")
    raise MalformedCbor(f"unsupported major type {major}")


def loads(data: bytes) -> Any:
    """Decode exactly one item spanning the whole buffer."""
    value, end = decode_prefix(data, 0)
    if end != len(data):
        raise MalformedCbor(f"{len(data) - end} trailing bytes after item")
    return value


def _encode_head(major: int, argument: int) -> bytes:
    if argument < 24:
        return bytes([(major << 5) | argument])
    if argument < 0x100:
        return bytes([(major << 5) | 24, argument])
    if argument < 0x10000:
        return bytes([(major << 5) | 25]) + struct.pack(">H", argument)
    if argument < 0x100000000:
        return bytes([(major << 5) | 26]) + struct.pack(">I", argument)
    return bytes([(major << 5) | 27]) + struct.pack(">Q", argument)


def dumps(value: Any) -> bytes:
    """Canonical encoding of the supported subset."""
    if value is False:
        return b"\xf4"
    if value is True:
        return b"\xf5"
    if value is None:
        return b"\xf6"
    if isinstance(value, int):
        if value >= 0:
            return _encode_head(0, value)
        return _encode_head(1, -1 - value)
    if isinstance(value, (bytes, bytearray, memoryview)):
        raw = bytes(value)
        return _encode_head(2, len(raw)) + raw
    if isinstance(value, str):
        raw = value.encode("utf-8")
        return _encode_head(3, len(raw)) + raw
    if isinstance(value, (list, tuple)):
        return _encode_head(4, len(value)) + b"".join(dumps(item) for item in value)
    if isinstance(value, dict):
        encoded = []
        for key, item in value.items():
            if not isinstance(key, (int, str)):
                raise TypeError(f"unsupported map key type {type(key).__name__}")
            encoded.append(dumps(key) + dumps(item))
        # CTAP2 canonical order: shorter encoded key first, then bytewise.
        encoded.sort(key=lambda kv: (len(_key_of(kv)), _key_of(kv)))
        return _encode_head(5, len(value)) + b"".join(encoded)
    raise TypeError(f"cannot encode {type(value).__name__}")


def _key_of(pair: bytes) -> bytes:
    _, end = decode_prefix(pair, 0)
    return pair[:end]
