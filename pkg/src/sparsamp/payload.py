"""CLI payload envelope: length prefix, flags, optional pre-whitening.

The codec itself is prefix-free and resumable; knowing where a message
ends inside a token stream is the caller's problem. The envelope solves
it for the CLI: a 32-bit big-endian bit-length prefix and a flag byte
travel in clear, then the payload bits (keystream-XORed when whitening is
on), then zero padding up to a chunk boundary.
"""

from __future__ import annotations

from .errors import ExtractionFailure, ParameterError
from .randomness import KeyedPrng, SeedKey

HEADER_BITS = 40  # 32-bit length + 8-bit flags
FLAG_WHITENED = 0x01
WHITEN_LABEL = b"whiten"


def bytes_to_bits(data: bytes) -> str:
    return "".join(format(b, "08b") for b in data)


def bits_to_bytes(bits: str) -> bytes:
    if len(bits) % 8:
        raise ParameterError("bit string length must be a multiple of 8")
    return bytes(int(bits[i : i + 8], 2) for i in range(0, len(bits), 8))


def _keystream(key: SeedKey, nbits: int) -> str:
    prng = KeyedPrng(SeedKey(key.key_bytes, key.stream_label + WHITEN_LABEL))
    out = []
    while sum(len(s) for s in out) < nbits:
        out.append(format(prng.next_unit().units, "064b"))
    return "".join(out)[:nbits]


def _xor_bits(a: str, b: str) -> str:
    return "".join("1" if x != y else "0" for x, y in zip(a, b))


def encode_payload(data: bytes, lm: int, key: SeedKey, whiten: bool = False) -> str:
    """Envelope bits, zero-padded to a chunk boundary."""
    payload = bytes_to_bits(data)
    if len(payload) >= 1 << 32:
        raise ParameterError("payload too large for a 32-bit length prefix")
    flags = FLAG_WHITENED if whiten else 0
    if whiten:
        payload = _xor_bits(payload, _keystream(key, len(payload)))
    bits = format(len(payload), "032b") + format(flags, "08b") + payload
    if len(bits) % lm:
        bits += "0" * (lm - len(bits) % lm)
    return bits


def peek_length(bits: str) -> int:
    """Total envelope bits needed, judged from the header alone."""
    if len(bits) < HEADER_BITS:
        raise ParameterError(f"need at least {HEADER_BITS} bits to read the header")
    declared = int(bits[:32], 2)
    flags = int(bits[32:40], 2)
    if flags not in (0, FLAG_WHITENED):
        raise ExtractionFailure(f"implausible envelope flags {flags:#04x}")
    if declared % 8:
        raise ExtractionFailure(f"implausible payload bit length {declared}")
    return HEADER_BITS + declared


def decode_payload(bits: str, key: SeedKey) -> bytes:
    """Recover payload bytes from extracted envelope bits.

    Raises ExtractionFailure when the header is implausible or the bits
    run out before the declared length: both are what a wrong key looks
    like.
    """
    needed = peek_length(bits)
    if len(bits) < needed:
        raise ExtractionFailure(
            f"extracted {len(bits)} bits but the envelope declares {needed}"
        )
    declared = needed - HEADER_BITS
    flags = int(bits[32:40], 2)
    payload = bits[HEADER_BITS:needed]
    if flags & FLAG_WHITENED:
        payload = _xor_bits(payload, _keystream(key, declared))
    return bits_to_bytes(payload)
