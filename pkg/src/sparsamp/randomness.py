"""Keyed pseudo-random unit-interval stream and exact grid arithmetic.

Both parties derive the same sequence of points on the 2**64-step unit
grid from a shared 32-byte key: value i of a stream is the first 8 bytes
of SHA-256(key || stream_label || big-endian-64(i)). All message shifting
happens on the integer grid, where modular addition is an exact bijection;
conversion to binary64 occurs only at interval-comparison time.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field

from .errors import ParameterError, StreamExhausted

GRID_BITS = 64
GRID_SIZE = 1 << GRID_BITS
_MAX_BELOW_ONE = math.nextafter(1.0, 0.0)
_INV_GRID = 2.0**-GRID_BITS


def shift_units(u: int, k: int, n: int, grid_bits: int = GRID_BITS) -> int:
    """Shift grid point ``u`` by ``floor(k * 2**grid_bits / n)``, wrapping.

    Exact integer arithmetic throughout; for fixed (k, n) this is a
    bijection on the grid. ``k`` must lie in [0, n).
    """
    if n < 1:
        raise ParameterError(f"candidate count must be >= 1, got {n}")
    if not 0 <= k < n:
        raise ParameterError(f"message index {k} outside [0, {n})")
    size = 1 << grid_bits
    return (u + (k << grid_bits) // n) % size


def units_to_real(u: int, grid_bits: int = GRID_BITS) -> float:
    """Nearest binary64 to ``u * 2**-grid_bits``, clamped strictly below 1.

    Multiplying by an exactly-representable power of two only rescales the
    exponent, so int-to-float conversion is the sole rounding step and the
    result equals correctly-rounded division. The clamp covers grid points
    within half an ulp of 1.0, which would otherwise round up and leave
    the sampling domain.
    """
    x = u * _INV_GRID if grid_bits == GRID_BITS else u / (1 << grid_bits)
    return x if x < 1.0 else _MAX_BELOW_ONE


@dataclass(frozen=True, slots=True)
class UnitFixed:
    """A point on the discrete unit-interval grid: ``units * 2**-64``."""

    units: int

    def __post_init__(self):
        if not 0 <= self.units < GRID_SIZE:
            raise ParameterError(f"grid point {self.units} outside [0, 2**64)")

    def shift(self, k: int, n: int) -> "UnitFixed":
        """The message-derived random number: this point shifted by k/n."""
        return UnitFixed(shift_units(self.units, k, n))

    def to_real(self) -> float:
        return units_to_real(self.units)


@dataclass(frozen=True, slots=True)
class SeedKey:
    """32-byte shared secret plus a label separating independent streams."""

    key_bytes: bytes
    stream_label: bytes = b""

    def __post_init__(self):
        if len(self.key_bytes) != 32:
            raise ParameterError(
                f"key must be exactly 32 bytes, got {len(self.key_bytes)}"
            )


@dataclass
class KeyedPrng:
    """Deterministic unit-interval stream, reconstructible from (seed, counter).

    Mutable and strictly sequential: one value per counter step, never
    safe for concurrent use. Independent sessions should use independent
    stream labels rather than sharing a counter.
    """

    seed: SeedKey
    counter: int = 0
    _prefix: "hashlib._Hash" = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.counter < GRID_SIZE:
            raise ParameterError("counter outside [0, 2**64)")
        self._prefix = hashlib.sha256(self.seed.key_bytes + self.seed.stream_label)

    def next_unit(self) -> UnitFixed:
        """Emit the next grid point and advance the counter by one."""
        return UnitFixed(self.next_units())

    def next_units(self) -> int:
        """next_unit without the wrapper object; the codec's hot path."""
        if self.counter >= GRID_SIZE:
            raise StreamExhausted("keyed stream consumed all 2**64 values")
        h = self._prefix.copy()
        h.update(self.counter.to_bytes(8, "big"))
        self.counter += 1
        return int.from_bytes(h.digest()[:8], "big")

    def clone(self) -> "KeyedPrng":
        return KeyedPrng(self.seed, self.counter)


def generate_key() -> bytes:
    return os.urandom(32)


def format_key(key_bytes: bytes) -> str:
    """Key file body: 64 hex characters plus trailing newline."""
    if len(key_bytes) != 32:
        raise ParameterError("key must be exactly 32 bytes")
    return key_bytes.hex() + "\n"


def parse_key(text: str) -> bytes:
    """Inverse of format_key; the trailing newline is optional."""
    body = text.strip()
    if len(body) != 64:
        raise ParameterError("key file must hold exactly 64 hex characters")
    try:
        return bytes.fromhex(body)
    except ValueError as exc:
        raise ParameterError(f"invalid hex in key file: {exc}") from exc
