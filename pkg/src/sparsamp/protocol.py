"""Step-protocol envelopes: newline-delimited JSON with hex-coded floats.

One JSON object per line. Probabilities travel as big-endian hex of their
binary64 representation so both ends hold bit-identical values; decimal
text round-tripping is exactly the corruption this format exists to
avoid. The server speaks first (hello); afterwards the client strictly
alternates one request (reset/choose) with one reply (dist/eos/error).
"""

from __future__ import annotations

import json
import math
import struct

from .errors import ProtocolError

PROTOCOL_VERSION = 1

ENVELOPE_TYPES = ("hello", "reset", "dist", "choose", "eos", "error")


def float_to_hex(value: float) -> str:
    return struct.pack(">d", value).hex().upper()


def hex_to_float(text: str) -> float:
    if not isinstance(text, str) or len(text) != 16:
        raise ProtocolError(f"probability hex must be 16 chars, got {text!r}")
    try:
        (value,) = struct.unpack(">d", bytes.fromhex(text))
    except ValueError as exc:
        raise ProtocolError(f"invalid probability hex {text!r}") from exc
    return value


def prob_from_hex(text: str) -> float:
    value = hex_to_float(text)
    if math.isnan(value) or not 0.0 < value < 1.0:
        raise ProtocolError(f"probability {value!r} outside (0, 1)")
    return value


def encode(envelope: dict) -> bytes:
    return json.dumps(envelope, separators=(",", ":")).encode("utf-8") + b"\n"


def decode(line: bytes) -> dict:
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable envelope: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError("envelope is not a JSON object")
    etype = obj.get("type")
    if etype not in ENVELOPE_TYPES:
        raise ProtocolError(f"unknown envelope type {etype!r}")
    return obj


def hello_envelope(vocab_size: int, model_id: str, eos_id: int | None) -> dict:
    return {
        "type": "hello",
        "version": PROTOCOL_VERSION,
        "vocab_size": vocab_size,
        "model_id": model_id,
        "eos_id": eos_id,
    }


def reset_envelope(
    prompt: str | None = None,
    context: list[int] | None = None,
    top_p: float | None = None,
    top_k: int | None = None,
) -> dict:
    return {
        "type": "reset",
        "prompt": prompt,
        "context": context,
        "top_p": top_p,
        "top_k": top_k,
    }


def dist_envelope(step: int, ids, probs) -> dict:
    return {
        "type": "dist",
        "step": step,
        "ids": [int(t) for t in ids],
        "probs_hex": [float_to_hex(float(p)) for p in probs],
    }


def choose_envelope(token_id: int) -> dict:
    return {"type": "choose", "token_id": int(token_id)}


def error_envelope(message: str) -> dict:
    return {"type": "error", "message": message}


def parse_hello(obj: dict) -> tuple[int, str, int | None]:
    if obj.get("type") != "hello":
        raise ProtocolError(f"expected hello, got {obj.get('type')!r}")
    if obj.get("version") != PROTOCOL_VERSION:
        raise ProtocolError(f"protocol version mismatch: {obj.get('version')!r}")
    vocab_size = obj.get("vocab_size")
    if not isinstance(vocab_size, int) or vocab_size < 1:
        raise ProtocolError(f"bad vocab_size {vocab_size!r}")
    model_id = obj.get("model_id")
    if not isinstance(model_id, str):
        raise ProtocolError("hello missing model_id")
    eos_id = obj.get("eos_id")
    if eos_id is not None and not isinstance(eos_id, int):
        raise ProtocolError(f"bad eos_id {eos_id!r}")
    return vocab_size, model_id, eos_id


def parse_dist(obj: dict, vocab_size: int, expected_step: int):
    """Validated (ids, probs) from a dist envelope."""
    if obj.get("step") != expected_step:
        raise ProtocolError(
            f"step {obj.get('step')!r} out of order, expected {expected_step}"
        )
    ids = obj.get("ids")
    hexes = obj.get("probs_hex")
    if not isinstance(ids, list) or not isinstance(hexes, list):
        raise ProtocolError("dist envelope missing ids/probs_hex lists")
    if len(ids) != len(hexes) or not ids:
        raise ProtocolError("ids and probs_hex must be equal-length and nonempty")
    for t in ids:
        if not isinstance(t, int) or not 0 <= t < vocab_size:
            raise ProtocolError(f"token id {t!r} outside vocabulary")
    probs = [prob_from_hex(h) for h in hexes]
    return ids, probs
