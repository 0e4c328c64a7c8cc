"""Tokenization-ambiguity handling: detection and checkpointed backtracking.

A detokenized string need not re-tokenize to the token path the sender
sampled when the vocabulary is not prefix-free. Extraction along a wrong
path either produces garbage or, frequently, hits a step where no
candidate message could have produced the observed token (candidate count
zero) - an early, free divergence alarm. Checkpoint frames add a 4-bit
position-bound CRC per 60 payload bits so a search over alternative
segmentations can also reject paths whose decoded chunks are corrupt.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

from .codec import EmbedSession, ExtractSession, sample
from .errors import AmbiguitySignal, ParameterError
from .randomness import SeedKey

PAYLOAD_BITS = 60
CHECK_BITS = 4
FRAME_BITS = PAYLOAD_BITS + CHECK_BITS
CRC4_POLY = 0x13  # x^4 + x + 1


@dataclass(frozen=True)
class ToyVocab:
    """A small string vocabulary with a deterministic canonical tokenizer."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ParameterError("duplicate tokens in vocabulary")
        if any(not t for t in self.tokens):
            raise ParameterError("empty string cannot be a token")

    def __len__(self) -> int:
        return len(self.tokens)

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def id_of(self, token: str) -> int:
        return self.tokens.index(token)

    def detokenize(self, token_ids) -> str:
        return "".join(self.tokens[t] for t in token_ids)

    @property
    def is_prefix_free(self) -> bool:
        for i, a in enumerate(self.tokens):
            for j, b in enumerate(self.tokens):
                if i != j and b.startswith(a):
                    return False
        return True


# Overlapping by construction: "aba" parses four ways.
DEFAULT_TOY_VOCAB = ToyVocab(("a", "b", "ab", "ba", "aba"))


def _matches_at(text: str, pos: int, vocab: ToyVocab) -> list[int]:
    """Token ids matching text at pos, longest first (canonical preference)."""
    hits = [
        tid for tid, tok in enumerate(vocab.tokens) if text.startswith(tok, pos)
    ]
    hits.sort(key=lambda tid: -len(vocab.tokens[tid]))
    return hits


def tokenize_canonical(text: str, vocab: ToyVocab) -> list[int]:
    """Greedy longest-match left-to-right tokenization."""
    out = []
    pos = 0
    while pos < len(text):
        hits = _matches_at(text, pos, vocab)
        if not hits:
            raise ParameterError(f"cannot tokenize {text!r} at position {pos}")
        out.append(hits[0])
        pos += len(vocab.tokens[hits[0]])
    return out


def _cut_positions(tokens: list[str]) -> frozenset[int]:
    cuts = set()
    pos = 0
    for tok in tokens[:-1]:
        pos += len(tok)
        cuts.add(pos)
    return frozenset(cuts)


def enumerate_segmentations(
    text: str, vocab: ToyVocab, limit: int | None = None
) -> list[tuple[str, ...]]:
    """Every way to segment text into vocabulary tokens, canonical first.

    Ordering after the canonical segmentation: fewest boundary changes
    relative to canonical, then greedy preference (longer tokens earlier),
    then lexicographic for determinism. Exhaustive by design; intended for
    short fixture strings.
    """
    results: list[tuple[str, ...]] = []

    def walk(pos: int, acc: list[str]):
        if pos == len(text):
            results.append(tuple(acc))
            return
        for tid in _matches_at(text, pos, vocab):
            tok = vocab.tokens[tid]
            acc.append(tok)
            walk(pos + len(tok), acc)
            acc.pop()

    walk(0, [])
    try:
        canonical_cuts = _cut_positions(
            [vocab.tokens[t] for t in tokenize_canonical(text, vocab)]
        )
    except ParameterError:
        canonical_cuts = frozenset()

    def order_key(seg: tuple[str, ...]):
        deviations = len(_cut_positions(list(seg)) ^ canonical_cuts)
        return (deviations, tuple(-len(t) for t in seg), seg)

    results.sort(key=order_key)
    return results if limit is None else results[:limit]


def crc4(bits: str) -> int:
    """Plain long division of the bit string by x^4 + x + 1, MSB first."""
    reg = 0
    for b in bits:
        reg = (reg << 1) | (b == "1")
        if reg & 0x10:
            reg ^= CRC4_POLY
    return reg & 0xF


def _frame_check(payload: str, index: int) -> int:
    index_bits = format(index & 0xFFFFFFFF, "032b")
    return crc4(payload + index_bits)


@dataclass(frozen=True)
class Frame:
    payload: str
    index: int
    check: int

    @property
    def bits(self) -> str:
        return self.payload + format(self.check, f"0{CHECK_BITS}b")


@dataclass(frozen=True)
class CheckpointedMessage:
    frames: tuple[Frame, ...]
    payload_bits: int

    @property
    def bits(self) -> str:
        return "".join(f.bits for f in self.frames)


def add_checkpoints(bits: str) -> CheckpointedMessage:
    """Frame payload bits as 60 data + 4 check bits, check bound to position."""
    if not bits:
        raise ParameterError("cannot frame an empty message")
    frames = []
    for index, start in enumerate(range(0, len(bits), PAYLOAD_BITS)):
        payload = bits[start : start + PAYLOAD_BITS].ljust(PAYLOAD_BITS, "0")
        frames.append(Frame(payload, index, _frame_check(payload, index)))
    return CheckpointedMessage(tuple(frames), len(bits))


def verify_frame(frame: Frame) -> bool:
    return _frame_check(frame.payload, frame.index) == frame.check


def verify_chunk(chunk_bits: str, index: int) -> bool:
    """Check one extracted 64-bit chunk against its frame position."""
    if len(chunk_bits) != FRAME_BITS:
        return False
    payload = chunk_bits[:PAYLOAD_BITS]
    check = int(chunk_bits[PAYLOAD_BITS:], 2)
    return _frame_check(payload, index) == check


@dataclass
class BranchRecord:
    tokens: tuple[int, ...]
    outcome: str  # signal | crc | drain | regen | dead_end | source_dry | success
    step_index: int

    @property
    def pruned_by_signal(self) -> bool:
        return self.outcome == "signal"


@dataclass
class BacktrackDiagnostics:
    nodes_explored: int = 0
    pruned_by_signal: int = 0
    pruned_by_crc: int = 0
    limit_hit: bool = False
    records: list[BranchRecord] = field(default_factory=list)

    def record(self, tokens: tuple[int, ...], outcome: str, step_index: int):
        self.records.append(BranchRecord(tokens, outcome, step_index))
        if outcome == "signal":
            self.pruned_by_signal += 1
        elif outcome == "crc":
            self.pruned_by_crc += 1


@dataclass
class BacktrackResult:
    bits: str | None
    recovered: bool
    path: tuple[int, ...] | None
    diagnostics: BacktrackDiagnostics


def _regenerates_text(payload, key, source_factory, vocab, text, lm):
    """Final acceptance check: re-embed the candidate and compare texts.

    The stego stream is a deterministic function of (key, message, model),
    so the true payload regenerates the received text exactly, while a
    payload that merely slipped past a 4-bit CRC collision diverges at its
    first corrupted chunk. Aborts on the first mismatching character.
    """
    framed = add_checkpoints(payload)
    session = EmbedSession(key, lm, framed.bits)
    source = source_factory()
    pos = 0
    while pos < len(text):
        dist = source.next_dist()
        if dist is None:
            return False
        token = session.step(dist)
        tok = vocab.tokens[token]
        if not text.startswith(tok, pos):
            return False
        source.advance(token)
        pos += len(tok)
    return pos == len(text)


def _drain_consistent(session, source, vocab, text, pos, path):
    """Verify the text past the last frame against plain-sampling replay.

    Once the message is complete the sender samples normally, so on the
    true path every remaining token is exactly predictable from the
    shared key. A candidate path only counts as a success if it explains
    the whole text this way; this is what keeps a lucky 4-bit CRC pass on
    a wrong path from being accepted.
    """
    tokens = list(path)
    while pos < len(text):
        dist = source.next_dist()
        if dist is None:
            return None
        predicted = sample(dist, session.prng.next_unit().to_real()).token_id
        tok = vocab.tokens[predicted]
        if not text.startswith(tok, pos):
            return None
        source.advance(predicted)
        tokens.append(predicted)
        pos += len(tok)
    return tuple(tokens)


def _search(
    text: str,
    vocab: ToyVocab,
    key: SeedKey,
    source_factory,
    payload_bits: int,
    lm: int,
    branch_limit: int,
    max_successes: int | None,
):
    """Depth-first search over segmentations of text, extracting as it goes.

    The canonical segmentation is explored first; a branch dies the moment
    extraction signals an impossible token (candidate count zero), a
    completed frame fails its CRC, or the text past the final frame stops
    matching plain-sampling replay. A branch that passes all of those must
    still regenerate the text when its payload is re-embedded. Sessions
    are rebuilt from the key per branch, so any replayable source works;
    the source object handed out by source_factory must be deep-copyable.
    """
    if lm != FRAME_BITS:
        raise ParameterError(f"checkpoint framing is defined for lm={FRAME_BITS}")
    if payload_bits < 1:
        raise ParameterError("payload_bits must be positive")
    frames_needed = math.ceil(payload_bits / PAYLOAD_BITS)
    diag = BacktrackDiagnostics()
    successes: list[tuple[str, tuple[int, ...]]] = []

    # Stack entries: (text position, tokens so far, session, source, chunks).
    root = (0, (), ExtractSession(key, lm), source_factory(), ())
    stack = [root]
    while stack:
        pos, tokens, session, source, chunks = stack.pop()
        if diag.nodes_explored >= branch_limit:
            diag.limit_hit = True
            break
        diag.nodes_explored += 1
        candidates = _matches_at(text, pos, vocab)
        if not candidates:
            diag.record(tokens, "dead_end", len(tokens) - 1)
            continue
        # Reverse so the greedy (longest-match) child is popped first.
        for tid in reversed(candidates):
            tok_len = len(vocab.tokens[tid])
            child_tokens = tokens + (tid,)
            child_session = ExtractSession.restore(session.save_state(), key)
            child_source = copy.deepcopy(source)
            dist = child_source.next_dist()
            if dist is None:
                diag.record(child_tokens, "source_dry", len(tokens))
                continue
            try:
                chunk = child_session.step(dist, tid)
            except AmbiguitySignal:
                diag.record(child_tokens, "signal", len(tokens))
                continue
            child_source.advance(tid)
            child_chunks = chunks
            if chunk is not None:
                if not verify_chunk(chunk, len(chunks)):
                    diag.record(child_tokens, "crc", len(tokens))
                    continue
                child_chunks = chunks + (chunk,)
                if len(child_chunks) == frames_needed:
                    full_path = _drain_consistent(
                        child_session, child_source, vocab, text,
                        pos + tok_len, child_tokens,
                    )
                    if full_path is None:
                        diag.record(child_tokens, "drain", len(tokens))
                        continue
                    payload = "".join(c[:PAYLOAD_BITS] for c in child_chunks)
                    payload = payload[:payload_bits]
                    if not _regenerates_text(
                        payload, key, source_factory, vocab, text, lm
                    ):
                        diag.record(child_tokens, "regen", len(tokens))
                        continue
                    diag.record(full_path, "success", len(tokens))
                    successes.append((payload, full_path))
                    if max_successes is not None and len(successes) >= max_successes:
                        return successes, diag
                    continue
            if pos + tok_len >= len(text):
                diag.record(child_tokens, "dead_end", len(tokens))
                continue
            stack.append(
                (pos + tok_len, child_tokens, child_session, child_source, child_chunks)
            )
    return successes, diag


def extract_with_backtrack(
    text: str,
    vocab: ToyVocab,
    key: SeedKey,
    source_factory,
    payload_bits: int,
    *,
    lm: int = FRAME_BITS,
    branch_limit: int = 10_000,
) -> BacktrackResult:
    """Recover a checkpointed payload from ambiguous text; first hit wins."""
    successes, diag = _search(
        text, vocab, key, source_factory, payload_bits, lm, branch_limit, 1
    )
    if successes:
        payload, path = successes[0]
        return BacktrackResult(payload, True, path, diag)
    return BacktrackResult(None, False, None, diag)


def enumerate_explanations(
    text: str,
    vocab: ToyVocab,
    key: SeedKey,
    source_factory,
    payload_bits: int,
    *,
    lm: int = FRAME_BITS,
    branch_limit: int = 100_000,
) -> list[str]:
    """Every payload that fully explains the text under this key.

    More than one entry means the text is genuinely ambiguous at this
    checkpoint strength: distinct messages whose stego streams detokenize
    identically and whose 4-bit checks collide. Extraction is then
    ill-posed no matter how the search is ordered.
    """
    successes, _ = _search(
        text, vocab, key, source_factory, payload_bits, lm, branch_limit, None
    )
    return [payload for payload, _ in successes]
