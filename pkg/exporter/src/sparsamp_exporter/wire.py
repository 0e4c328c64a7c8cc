"""Step-protocol framing: one JSON object per line, floats as hex binary64.

This mirrors the protocol documented in the codec's docs/protocol.md.
The exporter deliberately implements the wire format itself instead of
importing the codec package: the protocol is the only coupling between
the two sides, and keeping it that way is what makes the protocol real.
"""

from __future__ import annotations

import json
import struct

PROTOCOL_VERSION = 1


def float_to_hex(value: float) -> str:
    return struct.pack(">d", value).hex().upper()


def encode(envelope: dict) -> bytes:
    return json.dumps(envelope, separators=(",", ":")).encode("utf-8") + b"\n"


def decode(line: bytes) -> dict | None:
    """The parsed envelope, or None when the line is not a JSON object."""
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return None
    return obj if isinstance(obj, dict) else None


def hello(vocab_size: int, model_id: str, eos_id: int | None) -> dict:
    return {
        "type": "hello",
        "version": PROTOCOL_VERSION,
        "vocab_size": vocab_size,
        "model_id": model_id,
        "eos_id": eos_id,
    }


def dist(step: int, ids, probs) -> dict:
    return {
        "type": "dist",
        "step": step,
        "ids": [int(t) for t in ids],
        "probs_hex": [float_to_hex(float(p)) for p in probs],
    }


def eos() -> dict:
    return {"type": "eos"}


def error(message: str) -> dict:
    return {"type": "error", "message": message}
