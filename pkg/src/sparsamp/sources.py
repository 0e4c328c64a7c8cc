"""Self-contained step sources: synthetic generators, a character n-gram
model, and byte-exact trace files for deterministic replay.

A step source hands the codec one validated Distribution per generation
step (see codec.StepSource). Traces record the path actually taken, so
they can replay an extraction bit-exactly but cannot serve a fresh embed
of a different message: the next distribution may depend on the chosen
token, and a different message chooses different tokens.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .codec import Distribution, build_distribution
from .errors import ParameterError, TraceFormatError

SYNTHETIC_KINDS = ("uniform", "zipf", "entropy_target")
ENTROPY_SEARCH_TOLERANCE = 1e-3


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic distribution stream."""

    kind: str
    vocab_size: int
    zipf_exponent: float = 1.0
    target_entropy: float | None = None

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ParameterError(f"unknown synthetic kind {self.kind!r}")
        if self.vocab_size < 2:
            raise ParameterError("vocab_size must be at least 2")
        if self.kind == "zipf" and not self.zipf_exponent > 0:
            raise ParameterError("zipf exponent must be positive")
        if self.kind == "entropy_target":
            if self.target_entropy is None:
                raise ParameterError("entropy_target kind needs target_entropy")
            if not 0 < self.target_entropy <= math.log2(self.vocab_size):
                raise ParameterError(
                    f"target entropy must lie in (0, log2({self.vocab_size})]"
                )


def _entropy_bits(p: np.ndarray) -> float:
    return float(-(p * np.log2(p)).sum())


def _zipf_probs(vocab_size: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, vocab_size + 1, dtype=np.float64)
    w = ranks ** -exponent
    return w / w.sum()


def _entropy_target_probs(vocab_size: int, target: float) -> np.ndarray:
    """Temper a rank-1 Zipf base until its entropy matches the target.

    Entropy is monotone decreasing in the temperature exponent, so a
    plain bisection converges; the bracket grows until it straddles the
    target first.
    """
    base = np.log(np.arange(1, vocab_size + 1, dtype=np.float64))

    def probs_at(t: float) -> np.ndarray:
        w = np.exp(-t * base)
        return w / w.sum()

    lo, hi = 0.0, 1.0
    while _entropy_bits(probs_at(hi)) > target:
        lo = hi
        hi *= 2.0
        if hi > 1e6:
            raise ParameterError(f"entropy target {target} is unreachable")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        h = _entropy_bits(probs_at(mid))
        if abs(h - target) < ENTROPY_SEARCH_TOLERANCE:
            return probs_at(mid)
        if h > target:
            lo = mid
        else:
            hi = mid
    raise ParameterError(f"entropy search failed to converge on {target}")


def base_probs(spec: SyntheticSpec) -> np.ndarray:
    if spec.kind == "uniform":
        return np.full(spec.vocab_size, 1.0 / spec.vocab_size)
    if spec.kind == "zipf":
        return _zipf_probs(spec.vocab_size, spec.zipf_exponent)
    return _entropy_target_probs(spec.vocab_size, spec.target_entropy)


class SyntheticSource:
    """Deterministic stream of shuffled copies of a fixed base distribution.

    Shuffling reassigns probabilities to token ids step by step (entropy
    is unchanged) so token paths vary; uniform streams skip it since it
    would be a no-op.
    """

    eos_id = None

    def __init__(self, spec: SyntheticSpec, seed: int, max_steps: int):
        self.spec = spec
        self.seed = seed
        self.max_steps = max_steps
        self._base = base_probs(spec)
        self._ids = np.arange(spec.vocab_size, dtype=np.int64)
        self._rng = np.random.default_rng(seed)
        self._served = 0

    def next_dist(self) -> Distribution | None:
        if self._served >= self.max_steps:
            return None
        self._served += 1
        if self.spec.kind == "uniform":
            probs = self._base
        else:
            probs = self._base[self._rng.permutation(self.spec.vocab_size)]
        return build_distribution(self._ids, probs, trusted_ids=True)

    def advance(self, token_id: int) -> None:
        pass


def make_synthetic(spec: SyntheticSpec, seed: int, max_steps: int) -> SyntheticSource:
    return SyntheticSource(spec, seed, max_steps)


class NGramModel:
    """Character n-gram model with add-alpha smoothing.

    Smoothing keeps every conditional probability strictly positive, as
    the codec's distribution invariants require; distributions are always
    emitted in fixed (sorted) alphabet order.
    """

    def __init__(self, order: int, alpha: float, alphabet: str, counts: dict):
        if order < 1:
            raise ParameterError("n-gram order must be at least 1")
        if not alpha > 0:
            raise ParameterError("smoothing constant must be positive")
        if len(alphabet) < 2:
            raise ParameterError("alphabet must hold at least 2 symbols")
        self.order = order
        self.alpha = alpha
        self.alphabet = alphabet
        self._index = {ch: i for i, ch in enumerate(alphabet)}
        self.counts = counts  # context string -> np.ndarray over alphabet

    def next_probs(self, context: str) -> np.ndarray:
        ctx = context[-(self.order - 1) :] if self.order > 1 else ""
        counts = self.counts.get(ctx)
        if counts is None:
            counts = np.zeros(len(self.alphabet))
        total = counts.sum()
        return (counts + self.alpha) / (total + self.alpha * len(self.alphabet))

    def next_dist(self, context: str) -> Distribution:
        ids = np.arange(len(self.alphabet), dtype=np.int64)
        return build_distribution(ids, self.next_probs(context), trusted_ids=True)

    def detokenize(self, token_ids) -> str:
        return "".join(self.alphabet[t] for t in token_ids)

    def to_json(self) -> str:
        payload = {
            "order": self.order,
            "alpha": self.alpha,
            "alphabet": self.alphabet,
            "counts": {ctx: c.astype(int).tolist() for ctx, c in self.counts.items()},
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NGramModel":
        payload = json.loads(text)
        counts = {
            ctx: np.asarray(c, dtype=np.float64)
            for ctx, c in payload["counts"].items()
        }
        return cls(payload["order"], payload["alpha"], payload["alphabet"], counts)


def ngram_train(corpus: str, order: int, alpha: float = 0.5) -> NGramModel:
    """Count order-length windows of the corpus into conditional tables."""
    if not corpus:
        raise ParameterError("corpus must be nonempty")
    if order < 1:
        raise ParameterError("n-gram order must be at least 1")
    alphabet = "".join(sorted(set(corpus)))
    index = {ch: i for i, ch in enumerate(alphabet)}
    counts: dict[str, np.ndarray] = {}
    ctx_len = order - 1
    for i in range(ctx_len, len(corpus)):
        ctx = corpus[i - ctx_len : i]
        row = counts.get(ctx)
        if row is None:
            row = counts[ctx] = np.zeros(len(alphabet))
        row[index[corpus[i]]] += 1
    return NGramModel(order, alpha, alphabet, counts)


class NGramSource:
    """Step source walking an n-gram model from a seed context."""

    def __init__(self, model: NGramModel, context: str = "", max_steps: int = 256,
                 eos_char: str | None = None):
        self.model = model
        self.context = context
        self.max_steps = max_steps
        self._served = 0
        self.eos_id = model._index[eos_char] if eos_char is not None else None

    def next_dist(self) -> Distribution | None:
        if self._served >= self.max_steps:
            return None
        self._served += 1
        return self.model.next_dist(self.context)

    def advance(self, token_id: int) -> None:
        self.context += self.model.alphabet[token_id]


class TraceStep(NamedTuple):
    ids: np.ndarray
    probs: np.ndarray
    chosen: int


TRACE_MAGIC = b"SSTR1"


def _prob_to_hex(p: float) -> bytes:
    return struct.pack(">d", p).hex().upper().encode("ascii")


def _prob_from_hex(h: bytes) -> float:
    try:
        (value,) = struct.unpack(">d", bytes.fromhex(h.decode("ascii")))
    except (ValueError, UnicodeDecodeError) as exc:
        raise TraceFormatError(f"bad probability hex {h!r}") from exc
    if math.isnan(value) or value <= 0.0 or value >= 1.0:
        raise TraceFormatError(f"probability {value!r} outside (0, 1)")
    return value


def trace_write(steps: list[TraceStep], vocab_size: int, label: str = "") -> bytes:
    """Serialize recorded steps; probabilities as 16-hex-char binary64."""
    label_bytes = label.encode("utf-8")
    parts = [
        TRACE_MAGIC,
        struct.pack(">I", vocab_size),
        struct.pack(">H", len(label_bytes)),
        label_bytes,
        struct.pack(">I", len(steps)),
    ]
    for step in steps:
        parts.append(struct.pack(">I", len(step.ids)))
        for tid, p in zip(step.ids, step.probs):
            parts.append(struct.pack(">I", int(tid)))
            parts.append(_prob_to_hex(float(p)))
        parts.append(struct.pack(">I", int(step.chosen)))
    return b"".join(parts)


class _TraceReader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TraceFormatError("truncated trace record")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out


def trace_read(blob: bytes) -> tuple[int, str, list[TraceStep]]:
    rd = _TraceReader(blob)
    if rd.take(5) != TRACE_MAGIC:
        raise TraceFormatError("bad trace magic")
    (vocab_size,) = struct.unpack(">I", rd.take(4))
    (label_len,) = struct.unpack(">H", rd.take(2))
    label = rd.take(label_len).decode("utf-8")
    (n_steps,) = struct.unpack(">I", rd.take(4))
    steps = []
    for _ in range(n_steps):
        (n_entries,) = struct.unpack(">I", rd.take(4))
        ids = np.empty(n_entries, dtype=np.int64)
        probs = np.empty(n_entries, dtype=np.float64)
        for i in range(n_entries):
            (ids[i],) = struct.unpack(">I", rd.take(4))
            probs[i] = _prob_from_hex(rd.take(16))
        (chosen,) = struct.unpack(">I", rd.take(4))
        steps.append(TraceStep(ids, probs, int(chosen)))
    if rd.pos != len(blob):
        raise TraceFormatError("trailing bytes after final record")
    return vocab_size, label, steps


class TraceSource:
    """Replays a recorded trace's distributions bit-exactly.

    The replayed token path must match the recorded one; a divergence
    means the caller is trying to use a trace for something traces cannot
    express.
    """

    eos_id = None

    def __init__(self, steps: list[TraceStep]):
        self.steps = steps
        self._served = 0

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TraceSource":
        _, _, steps = trace_read(blob)
        return cls(steps)

    @property
    def chosen_tokens(self) -> list[int]:
        return [s.chosen for s in self.steps]

    def next_dist(self) -> Distribution | None:
        if self._served >= len(self.steps):
            return None
        step = self.steps[self._served]
        self._served += 1
        return build_distribution(step.ids, step.probs)

    def advance(self, token_id: int) -> None:
        recorded = self.steps[self._served - 1].chosen
        if token_id != recorded:
            raise TraceFormatError(
                f"token path diverges from trace: got {token_id}, recorded {recorded}"
            )


class RecordingSource:
    """Wraps a source, recording each (distribution, chosen token) pair."""

    def __init__(self, inner):
        self.inner = inner
        self.eos_id = inner.eos_id
        self.steps: list[TraceStep] = []
        self._pending: Distribution | None = None

    def next_dist(self) -> Distribution | None:
        dist = self.inner.next_dist()
        self._pending = dist
        return dist

    def advance(self, token_id: int) -> None:
        if self._pending is not None:
            self.steps.append(
                TraceStep(self._pending.ids, self._pending.probs, token_id)
            )
            self._pending = None
        self.inner.advance(token_id)


def iter_dists(source) -> Iterator[Distribution]:
    """Plain iteration for callers that never feed tokens back."""
    while True:
        dist = source.next_dist()
        if dist is None:
            return
        yield dist
