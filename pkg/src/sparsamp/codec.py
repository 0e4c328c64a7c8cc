"""Embed/extract state machines for message-driven sampling.

Embedding replaces the sampling step of a generative pipeline. Each step
draws a fresh keyed grid point r, shifts it by k/N where k indexes the
message among its N remaining candidates, samples the token with the
shifted value, and then narrows (N, k) to the count and rank of candidate
indices whose shifted values land inside the sampled token's cumulative
slice. The distribution being sampled is never modified, so cover and
stego token streams are identically distributed.

Interval arithmetic (temp bounds, comparisons) runs in binary64 exactly
as sampling does; candidate bookkeeping runs in exact arbitrary-precision
integers because N starts at 2**l_m with l_m up to 1023.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Protocol

import numpy as np

from . import _kernels
from .errors import (
    AmbiguitySignal,
    ConsistencyError,
    DistributionError,
    ExtractionFailure,
    ParameterError,
)
from .randomness import (
    _INV_GRID,
    _MAX_BELOW_ONE,
    KeyedPrng,
    SeedKey,
    units_to_real,
)

MIN_CHUNK_BITS = 2
MAX_CHUNK_BITS = 1023  # 2**1024 overflows binary64, killing interval math
DEFAULT_CHUNK_BITS = 64

PROB_SUM_TOLERANCE = 1e-9

_STATE_MAGIC = b"SSV1"
_KIND_EMBED = 1
_KIND_EXTRACT = 2


@dataclass(frozen=True)
class Distribution:
    """An ordered token distribution with cumulative boundaries.

    Order is the model's default order; ``cum[-1]`` is forced to exactly
    1.0 so the token slices tile [0, 1) with no gap at the top.
    """

    ids: np.ndarray
    probs: np.ndarray
    cum: np.ndarray

    def __len__(self) -> int:
        return self.ids.shape[0]

    def index_of(self, token_id: int) -> int:
        hits = np.flatnonzero(self.ids == token_id)
        if hits.shape[0] == 0:
            raise KeyError(token_id)
        return int(hits[0])

    def slice_of(self, token_id: int) -> tuple[float, float]:
        """The [start, end) cumulative slice owned by ``token_id``."""
        idx = self.index_of(token_id)
        se0 = float(self.cum[idx - 1]) if idx > 0 else 0.0
        return se0, float(self.cum[idx])


def build_distribution(ids, probs, *, trusted_ids: bool = False) -> Distribution:
    """Validate (ids, probs) and compute cumulative boundaries.

    trusted_ids skips the O(n log n) duplicate scan for callers that
    construct ids as a range themselves; all other invariants are always
    checked.
    """
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    if ids.ndim != 1 or probs.ndim != 1 or ids.shape != probs.shape:
        raise DistributionError("ids and probs must be 1-d arrays of equal length")
    if ids.shape[0] == 0:
        raise DistributionError("empty distribution")
    if not np.all(probs > 0.0):
        raise DistributionError("all probabilities must be strictly positive")
    if not trusted_ids and np.unique(ids).shape[0] != ids.shape[0]:
        raise DistributionError("duplicate token ids")
    total = float(probs.sum())
    if abs(total - 1.0) > PROB_SUM_TOLERANCE:
        raise DistributionError(f"probabilities sum to {total!r}, outside tolerance")
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    if cum.shape[0] > 1:
        if not np.all(np.diff(cum) > 0.0):
            raise DistributionError("cumulative sums not strictly increasing")
        if cum[-2] >= 1.0:
            raise DistributionError("cumulative sums reach 1.0 before the last token")
    return Distribution(ids, probs, cum)


class TokenDraw(NamedTuple):
    """A sampled token with the cumulative slice [se0, se1) it owns."""

    token_id: int
    se0: float
    se1: float


class ChunkState(NamedTuple):
    """Candidate-message count and the true message's index among them."""

    n_m: int
    k_m: int


def sample(dist: Distribution, r: float) -> TokenDraw:
    """First token whose cumulative sum strictly exceeds ``r``.

    A value exactly on a boundary selects the higher token, so each token
    owns the half-open slice [cum[k-1], cum[k]).
    """
    if not 0.0 <= r < 1.0:
        raise ParameterError(f"sampling value {r!r} outside [0, 1)")
    cum = dist.cum
    idx = _kernels.sample_index(cum, r)
    se0 = cum.item(idx - 1) if idx > 0 else 0.0
    return TokenDraw(int(dist.ids[idx]), se0, cum.item(idx))


def _sparse_window(se0: float, se1: float, fn: float, r: float) -> tuple[int, int]:
    """Candidate-window bounds: binary64 products, exact integer ceilings.

    Shared by embedding, extraction and the public sparse_update so the
    two sides can never round differently.
    """
    return math.ceil((se0 - r) * fn), math.ceil((se1 - r) * fn)


def sparse_update(
    draw: TokenDraw, state: ChunkState, r: float, step_index: int | None = None
) -> ChunkState:
    """Narrow (N, k) to the candidates whose shifted values sampled ``draw``.

    The updated index is the rank of the true message's shifted value
    inside the token's slice. The postcondition 0 <= k' < N' must hold
    whenever the shifted value derived from (r, state) actually sampled
    ``draw``; its failure means embed and extract would disagree, so it
    is a hard abort rather than anything silently corrected.
    """
    n, k = state
    fn = float(n)
    temp0, temp1 = _sparse_window(draw.se0, draw.se1, fn, r)
    if float(k) + r * fn >= fn:
        k_new = k - n - temp0
    else:
        k_new = k - temp0
    n_new = temp1 - temp0
    if n_new < 1 or not 0 <= k_new < n_new:
        raise ConsistencyError(
            f"sparse update left ({n_new}, {k_new}) outside its invariant "
            f"(from N={n}, window [{temp0}, {temp1}))",
            step_index=step_index,
        )
    return ChunkState(n_new, k_new)


def backward_reconstruct(temp0_arr: list[int], n_arr: list[int], lm: int) -> int:
    """Recover a chunk's index from the per-step window starts and counts.

    Walks the narrowing backwards: the signed representative at each step
    is its window start plus the next level's index reduced modulo that
    step's candidate count. Requires the final count to be 1.
    """
    if not n_arr or n_arr[-1] != 1:
        raise ParameterError("reconstruction requires a fully resolved chunk")
    k = temp0_arr[-1]
    for i in range(len(temp0_arr) - 2, -1, -1):
        k = temp0_arr[i] + ((k + n_arr[i]) % n_arr[i])
    return (k + (1 << lm)) % (1 << lm)


def _check_chunk_bits(lm: int) -> int:
    if not isinstance(lm, int) or not MIN_CHUNK_BITS <= lm <= MAX_CHUNK_BITS:
        raise ParameterError(
            f"chunk length must be an integer in [{MIN_CHUNK_BITS}, "
            f"{MAX_CHUNK_BITS}], got {lm!r}"
        )
    return lm


def _check_bits(bits: str) -> str:
    if bits and set(bits) - {"0", "1"}:
        raise ParameterError("message bits must be a string of 0s and 1s")
    return bits


class StepSource(Protocol):
    """Anything that serves per-step token distributions to the codec.

    next_dist returns None when the source has nothing further to serve;
    advance informs context-dependent sources of the chosen token. A
    non-None eos_id marks a token that terminates generation when sampled.
    """

    eos_id: int | None

    def next_dist(self) -> Distribution | None: ...

    def advance(self, token_id: int) -> None: ...


def _encode_biguint(value: int) -> bytes:
    if value < 0:
        raise ParameterError("expected a non-negative integer")
    body = value.to_bytes((value.bit_length() + 7) // 8, "big") if value else b""
    return struct.pack(">I", len(body)) + body


def _encode_bigint(value: int) -> bytes:
    return bytes([1 if value < 0 else 0]) + _encode_biguint(abs(value))


class _StateReader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ParameterError("truncated session state")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def biguint(self) -> int:
        (n,) = struct.unpack(">I", self.take(4))
        return int.from_bytes(self.take(n), "big")

    def bigint(self) -> int:
        sign = self.take(1)[0]
        mag = self.biguint()
        return -mag if sign else mag


class EmbedSession:
    """Sequential embedding state machine over one keyed stream.

    One grid point is drawn per generated token whether or not message
    bits remain, keeping sender and receiver counters aligned no matter
    where the message ends inside the stream.
    """

    def __init__(self, key: SeedKey, lm: int, message_bits: str):
        self.lm = _check_chunk_bits(lm)
        self.message_bits = _check_bits(message_bits)
        self._msg_len = len(message_bits)
        self.prng = KeyedPrng(key)
        self.chunk = ChunkState(1, 0)
        self.bit_pos = 0
        self.chunks_consumed = 0
        self.pad_bits = 0
        self.steps = 0
        self.first_embed_step: int | None = None
        self.last_resolve_step: int | None = None

    @property
    def embedding_active(self) -> bool:
        return self.bit_pos < self._msg_len or self.chunk.n_m > 1

    @property
    def message_done(self) -> bool:
        return not self.embedding_active

    def _load_chunk(self) -> None:
        bits = self.message_bits[self.bit_pos : self.bit_pos + self.lm]
        self.bit_pos += len(bits)
        if len(bits) < self.lm:
            self.pad_bits = self.lm - len(bits)
            bits = bits.ljust(self.lm, "0")
        self.chunk = ChunkState(1 << self.lm, int(bits, 2))
        self.chunks_consumed += 1

    def step(self, dist: Distribution) -> int:
        """Sample one token from ``dist``, embedding if bits remain.

        Mirrors sample() + sparse_update() on a raw-integer fast path:
        this runs once per generated token and must stay within a small
        constant of a plain sampling step.
        """
        u = self.prng.next_units()
        step_index = self.steps
        self.steps += 1
        cum = dist.cum
        n, k = self.chunk
        if n == 1:
            if self.bit_pos >= self._msg_len:
                r = u * _INV_GRID
                idx = _kernels.sample_index(cum, r if r < 1.0 else _MAX_BELOW_ONE)
                return dist.ids.item(idx)
            self._load_chunk()
            n, k = self.chunk
        if self.first_embed_step is None:
            self.first_embed_step = step_index
        # units_to_real and shift_units inlined (0 <= k < n is a session
        # invariant); multiplying by the exact power of two matches
        # correctly-rounded division
        r = u * _INV_GRID
        if r >= 1.0:
            r = _MAX_BELOW_ONE
        er = ((u + (k << 64) // n) & 0xFFFFFFFFFFFFFFFF) * _INV_GRID
        idx = _kernels.sample_index(cum, er if er < 1.0 else _MAX_BELOW_ONE)
        se1 = cum.item(idx)
        se0 = cum.item(idx - 1) if idx > 0 else 0.0
        fn = float(n)
        temp0, temp1 = _sparse_window(se0, se1, fn, r)
        k_new = k - n - temp0 if float(k) + r * fn >= fn else k - temp0
        n_new = temp1 - temp0
        if n_new < 1 or not 0 <= k_new < n_new:
            raise ConsistencyError(
                f"sparse update left ({n_new}, {k_new}) outside its invariant "
                f"(from N={n}, window [{temp0}, {temp1}))",
                step_index=step_index,
            )
        self.chunk = ChunkState(n_new, k_new)
        if n_new == 1:
            self.last_resolve_step = step_index
        return dist.ids.item(idx)

    @property
    def bits_embedded(self) -> int:
        """Message bits fully resolved so far (excludes an open chunk)."""
        done = self.chunks_consumed - (0 if self.chunk.n_m == 1 else 1)
        return done * self.lm - (self.pad_bits if self.chunk.n_m == 1 else 0)

    def save_state(self) -> bytes:
        """Residual state for resuming in a later stream.

        The key and the not-yet-consumed message tail are not stored;
        the caller re-supplies both (slice the original message at
        ``chunks_consumed * lm`` bits).
        """
        return (
            _STATE_MAGIC
            + bytes([_KIND_EMBED])
            + struct.pack(">HQQ", self.lm, self.prng.counter, self.chunks_consumed)
            + _encode_biguint(self.chunk.n_m)
            + _encode_biguint(self.chunk.k_m)
        )

    @classmethod
    def restore(cls, blob: bytes, key: SeedKey, remaining_bits: str) -> "EmbedSession":
        rd = _StateReader(blob)
        if rd.take(4) != _STATE_MAGIC or rd.take(1)[0] != _KIND_EMBED:
            raise ParameterError("not an embed session state blob")
        lm, counter, chunks = struct.unpack(">HQQ", rd.take(18))
        session = cls(key, lm, remaining_bits)
        session.prng.counter = counter
        session.chunks_consumed = chunks
        n_m = rd.biguint()
        k_m = rd.biguint()
        if n_m < 1 or not 0 <= k_m < n_m:
            raise ParameterError("corrupt chunk state in blob")
        session.chunk = ChunkState(n_m, k_m)
        return session


class ExtractSession:
    """Mirror of EmbedSession: rebuilds chunk indices from the token path."""

    def __init__(self, key: SeedKey, lm: int):
        self.lm = _check_chunk_bits(lm)
        self.prng = KeyedPrng(key)
        self.n_m = 1 << lm
        self.temp0_arr: list[int] = []
        self.n_arr: list[int] = []
        self.steps = 0
        self.chunks_emitted = 0

    def step(self, dist: Distribution, token_id: int) -> str | None:
        """Consume one received token; returns a chunk when one resolves.

        A candidate count of zero means no message could have produced
        this token on this path: the defining signal of a tokenization
        divergence, surfaced as AmbiguitySignal. A token missing from the
        distribution is the same impossibility and gets the same signal.
        """
        r = units_to_real(self.prng.next_units())
        step_index = self.steps
        self.steps += 1
        try:
            se0, se1 = dist.slice_of(token_id)
        except KeyError:
            raise AmbiguitySignal(
                f"token {token_id} absent from the step distribution",
                step_index=step_index,
            ) from None
        temp0, temp1 = _sparse_window(se0, se1, float(self.n_m), r)
        self.temp0_arr.append(temp0)
        n_new = temp1 - temp0
        self.n_arr.append(n_new)
        if n_new == 0:
            raise AmbiguitySignal(
                "no candidate message can reach the received token",
                step_index=step_index,
            )
        self.n_m = n_new
        if n_new > 1:
            return None
        value = backward_reconstruct(self.temp0_arr, self.n_arr, self.lm)
        self.temp0_arr.clear()
        self.n_arr.clear()
        self.n_m = 1 << self.lm
        self.chunks_emitted += 1
        return format(value, f"0{self.lm}b")

    def save_state(self) -> bytes:
        parts = [
            _STATE_MAGIC,
            bytes([_KIND_EXTRACT]),
            struct.pack(">HQQ", self.lm, self.prng.counter, self.chunks_emitted),
            _encode_biguint(self.n_m),
            struct.pack(">I", len(self.temp0_arr)),
        ]
        for t0, n in zip(self.temp0_arr, self.n_arr):
            parts.append(_encode_bigint(t0))
            parts.append(_encode_biguint(n))
        return b"".join(parts)

    @classmethod
    def restore(cls, blob: bytes, key: SeedKey) -> "ExtractSession":
        rd = _StateReader(blob)
        if rd.take(4) != _STATE_MAGIC or rd.take(1)[0] != _KIND_EXTRACT:
            raise ParameterError("not an extract session state blob")
        lm, counter, chunks = struct.unpack(">HQQ", rd.take(18))
        session = cls(key, lm)
        session.prng.counter = counter
        session.chunks_emitted = chunks
        session.n_m = rd.biguint()
        (n_entries,) = struct.unpack(">I", rd.take(4))
        for _ in range(n_entries):
            session.temp0_arr.append(rd.bigint())
            session.n_arr.append(rd.biguint())
        return session


@dataclass
class EmbedResult:
    tokens: list[int]
    session: EmbedSession
    step_entropies: list[float] = field(default_factory=list)


@dataclass
class ExtractResult:
    bits: str
    session: ExtractSession


def embed(
    message_bits: str,
    lm: int,
    key: SeedKey,
    source: StepSource,
    *,
    session: EmbedSession | None = None,
    collect_entropy: bool = False,
) -> EmbedResult:
    """Drive embedding against a step source until it ends or emits EOS.

    Generation does not stop when the message completes; remaining steps
    sample normally, exactly as a cover stream would. If the source ends
    first, the returned session carries the residual chunk state for a
    later resumed stream.
    """
    if session is None:
        session = EmbedSession(key, lm, message_bits)
    tokens: list[int] = []
    entropies: list[float] = []
    while True:
        dist = source.next_dist()
        if dist is None:
            break
        if collect_entropy:
            p = dist.probs
            entropies.append(float(-(p * np.log2(p)).sum()))
        token = session.step(dist)
        tokens.append(token)
        source.advance(token)
        if source.eos_id is not None and token == source.eos_id:
            break
    return EmbedResult(tokens, session, entropies)


def extract(
    tokens: list[int],
    lm: int,
    key: SeedKey,
    source: StepSource,
    *,
    session: ExtractSession | None = None,
    max_bits: int | None = None,
) -> ExtractResult:
    """Replay a received token path against the shared source and decode.

    Stops early once ``max_bits`` bits have been recovered; chunks past
    the true end of the message decode to meaningless values (the sender
    was sampling normally by then), so callers that know the message
    length should pass it.
    """
    if session is None:
        session = ExtractSession(key, lm)
    out: list[str] = []
    emitted = 0
    for token in tokens:
        if max_bits is not None and emitted >= max_bits:
            break
        dist = source.next_dist()
        if dist is None:
            raise ExtractionFailure(
                "distribution source ended before the token sequence did"
            )
        chunk = session.step(dist, token)
        if chunk is not None:
            out.append(chunk)
            emitted += len(chunk)
        source.advance(token)
    return ExtractResult("".join(out), session)
