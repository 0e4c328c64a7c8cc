import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsamp.errors import ExtractionFailure, ParameterError
from sparsamp.payload import (
    HEADER_BITS,
    bits_to_bytes,
    bytes_to_bits,
    decode_payload,
    encode_payload,
    peek_length,
)
from sparsamp.randomness import SeedKey

KEY = SeedKey(bytes(32))


def test_bit_helpers():
    assert bytes_to_bits(b"\xa5") == "10100101"
    assert bits_to_bytes("10100101") == b"\xa5"
    with pytest.raises(ParameterError):
        bits_to_bytes("101")


@given(st.binary(max_size=64), st.sampled_from([2, 8, 64, 255]))
@settings(max_examples=120)
def test_envelope_round_trip(data, lm):
    bits = encode_payload(data, lm, KEY)
    assert len(bits) % lm == 0
    declared = HEADER_BITS + len(data) * 8
    assert declared <= len(bits) < declared + lm
    assert peek_length(bits) == declared
    assert decode_payload(bits, KEY) == data


@given(st.binary(min_size=1, max_size=64))
@settings(max_examples=60)
def test_whitening_round_trip(data):
    bits = encode_payload(data, 16, KEY, whiten=True)
    plain = encode_payload(data, 16, KEY, whiten=False)
    assert decode_payload(bits, KEY) == data
    if data != b"":
        assert bits != plain  # keystream actually changed the payload area


def test_whitened_payload_header_stays_clear():
    bits = encode_payload(b"hi", 8, KEY, whiten=True)
    assert int(bits[:32], 2) == 16
    assert int(bits[32:40], 2) == 1


def test_decode_detects_garbage_flags():
    bits = "0" * 32 + "11111111" + "0" * 24
    with pytest.raises(ExtractionFailure):
        peek_length(bits)


def test_decode_detects_non_byte_length():
    bits = format(13, "032b") + "0" * 8 + "0" * 24
    with pytest.raises(ExtractionFailure):
        peek_length(bits)


def test_decode_detects_truncation():
    bits = encode_payload(b"hello world", 8, KEY)
    with pytest.raises(ExtractionFailure):
        decode_payload(bits[:56], KEY)


def test_empty_payload():
    bits = encode_payload(b"", 64, KEY)
    assert decode_payload(bits, KEY) == b""
