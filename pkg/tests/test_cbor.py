import pytest
from hypothesis import given
from hypothesis import strategies as st

from cahicha import cbor
from cahicha.cbor import MalformedCbor


@pytest.mark.parametrize(
    "value,encoded",
    [
        (0, b"\x00"),
        (23, b"\x17"),
        (24, b"\x18\x18"),
        (1000, b"\x19\x03\xe8"),
        (-1, b"\x20"),
        (-7, b"\x26"),
        (-257, b"\x39\x01\x00"),
        (b"", b"\x40"),
        (b"\x01\x02", b"\x42\x01\x02"),
        ("fmt", b"\x63fmt"),
        ([], b"\x80"),
        ([1, 2], b"\x82\x01\x02"),
        ({}, b"\xa0"),
        (False, b"\xf4"),
        (True, b"\xf5"),
        (None, b"\xf6"),
    ],
)
def test_scalar_encodings(value, encoded):
    assert cbor.dumps(value) == encoded
    assert cbor.loads(encoded) == value


def test_canonical_map_ordering():
    # shorter encoded keys first, then bytewise: 1, -1, "b", "aa"
    value = {"aa": 0, 1: 2, "b": 1, -1: 3}
    assert cbor.dumps(value) == bytes.fromhex("a40102200361620162616100")


def test_map_round_trip_preserves_values():
    value = {"fmt": "packed", "attStmt": {"alg": -7, "sig": b"\x30\x45"}, "authData": b"\x00" * 37}
    assert cbor.loads(cbor.dumps(value)) == value


@pytest.mark.parametrize(
    "data",
    [
        b"",  # empty buffer
        b"\x18",  # uint8 argument missing
        b"\x42\x01",  # byte string shorter than declared
        b"\x5f\x41\x00\xff",  # indefinite-length byte string
        b"\xc0\x00",  # tag
        b"\xf9\x3c\x00",  # float16
        b"\xfb" + b"\x00" * 8,  # float64
        b"\x82\x01",  # array with missing element
        b"\xa1\x01",  # map with missing value
        b"\x01\x02",  # trailing bytes
        b"\xa2\x01\x00\x01\x01",  # duplicate key
        b"\x62\xff\xfe",  # invalid utf-8 text
        b"\xa1\x80\x00",  # array as map key
    ],
)
def test_malformed_inputs_rejected(data):
    with pytest.raises(MalformedCbor):
        cbor.loads(data)


def test_decode_prefix_reports_consumed_length():
    buffer = cbor.dumps({1: 2}) + b"rest"
    value, end = cbor.decode_prefix(buffer, 0)
    assert value == {1: 2}
    assert buffer[end:] == b"rest"


_scalars = st.one_of(
    st.integers(min_value=-(2**63), max_value=2**64 - 1),
    st.binary(max_size=64),
    st.text(max_size=32),
    st.booleans(),
    st.none(),
)
_values = st.recursive(
    _scalars,
    lambda children: st.one_of(
        st.lists(children, max_size=6),
        st.dictionaries(st.one_of(st.integers(min_value=-100, max_value=100), st.text(max_size=8)), children, max_size=6),
    ),
    max_leaves=24,
)


@given(_values)
def test_round_trip_property(value):
    assert cbor.loads(cbor.dumps(value)) == value
