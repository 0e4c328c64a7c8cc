"""Builders for tokenization-divergence fixtures over the toy vocabulary.

A fixture is an embed run whose detokenized text re-tokenizes to a
different (canonical) token path than the one sampled, which is exactly
the situation checkpointed backtracking exists to survive.
"""

from dataclasses import dataclass

import numpy as np

from sparsamp.ambiguity import (
    ToyVocab,
    add_checkpoints,
    enumerate_explanations,
    tokenize_canonical,
)
from sparsamp.codec import embed
from sparsamp.randomness import SeedKey
from sparsamp.sources import SyntheticSpec, make_synthetic

# Mostly single-character tokens with two overlapping merges, so token
# ambiguity is possible but localized: the realistic regime, where a
# divergence site appears every few dozen tokens rather than everywhere.
FIXTURE_VOCAB = ToyVocab(
    ("a", "b", "c", "d", "e", "f", "g", "h", "ab", "cd")
)
TOY_SPEC = SyntheticSpec("zipf", len(FIXTURE_VOCAB), zipf_exponent=0.8)


@dataclass
class AmbiguityFixture:
    seed: int
    payload: str
    key: SeedKey
    true_tokens: list[int]
    canonical_tokens: list[int]
    text: str

    def source_factory(self):
        return make_synthetic(TOY_SPEC, self.seed * 7 + 1, 4096)

    @property
    def diverged(self) -> bool:
        return self.canonical_tokens != self.true_tokens

    @property
    def divergence_index(self) -> int:
        """First canonical-path step that departs from the true path."""
        for i, (a, b) in enumerate(zip(self.canonical_tokens, self.true_tokens)):
            if a != b:
                return i
        return min(len(self.canonical_tokens), len(self.true_tokens))


def build_fixture(seed: int, frames: int = 2, drain_steps: int = 2):
    """One embed run over the toy vocabulary; None if the budget ran out."""
    rng = np.random.default_rng(seed)
    payload = "".join(rng.choice(["0", "1"], size=60 * frames).tolist())
    framed = add_checkpoints(payload)
    key = SeedKey(bytes(32), f"ambig-{seed}".encode())
    header = make_synthetic(TOY_SPEC, seed * 7 + 1, 4096)
    result = embed(framed.bits, 64, key, header)
    if not result.session.message_done:
        return None
    # Re-run with the budget cut right after resolution plus a short drain;
    # the source is context-free, so the shorter run is a prefix of the first.
    cut = result.session.last_resolve_step + 1 + drain_steps
    result = embed(framed.bits, 64, key, make_synthetic(TOY_SPEC, seed * 7 + 1, cut))
    tokens = result.tokens
    text = FIXTURE_VOCAB.detokenize(tokens)
    canonical = tokenize_canonical(text, FIXTURE_VOCAB)
    return AmbiguityFixture(seed, payload, key, tokens, canonical, text)


def well_posed(fixture: AmbiguityFixture) -> bool:
    """True when exactly one payload explains the text.

    A CRC-4 collision on a token swap that re-syncs the stream can leave
    two messages whose stego output is the identical text; no extractor
    can then name "the" payload, so such seeds are excluded from recovery
    benchmarks rather than counted against the search.
    """
    explanations = enumerate_explanations(
        fixture.text, FIXTURE_VOCAB, fixture.key, fixture.source_factory,
        payload_bits=len(fixture.payload),
    )
    return explanations == [fixture.payload]


def diverged_fixtures(count: int, frames: int = 2, start_seed: int = 0):
    """First `count` seeds (from start_seed) whose canonical path is wrong
    and whose payload is uniquely determined by the text."""
    out = []
    seed = start_seed
    while len(out) < count:
        fixture = build_fixture(seed, frames=frames)
        if fixture is not None and fixture.diverged and well_posed(fixture):
            out.append(fixture)
        seed += 1
    return out
