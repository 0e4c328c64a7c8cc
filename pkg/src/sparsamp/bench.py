"""Repeatable embedding runs for capacity benchmarks.

Kept apart from metrics so the measurement harness (which drives the
codec) stays separate from the pure evaluation functions.
"""

from __future__ import annotations

import math

import numpy as np

from .codec import embed
from .metrics import report_from_embed, utilization
from .randomness import SeedKey
from .sources import SyntheticSpec, make_synthetic


def run_utilization(
    lm: int,
    message_bits: int,
    *,
    entropy_bits: float = 6.0,
    vocab: int = 256,
    seed: int = 0,
    label: bytes = b"bench",
) -> float:
    """Embed one random message and return its entropy utilization."""
    rng = np.random.default_rng(seed)
    message = "".join(rng.choice(["0", "1"], size=message_bits).tolist())
    key = SeedKey(bytes(32), label + str(seed).encode())
    spec = SyntheticSpec("entropy_target", vocab, target_entropy=entropy_bits)
    max_steps = math.ceil(message_bits / entropy_bits) * 6 + 64
    source = make_synthetic(spec, seed + 1, max_steps)
    result = embed(message, lm, key, source, collect_entropy=True)
    if not result.session.message_done:
        raise RuntimeError(
            f"step budget {max_steps} too small for {message_bits} bits at lm={lm}"
        )
    return utilization(report_from_embed(result))


def mean_utilization(
    lm: int, runs: int, *, entropy_bits: float = 6.0, vocab: int = 256,
    base_seed: int = 0,
) -> float:
    # A few chunks per run so inter-chunk boundaries are represented.
    message_bits = max(lm, ((128 + lm - 1) // lm) * lm)
    values = [
        run_utilization(
            lm, message_bits, entropy_bits=entropy_bits, vocab=vocab,
            seed=base_seed + i,
        )
        for i in range(runs)
    ]
    return float(np.mean(values))


def utilization_sweep(
    lms=(2, 8, 64), runs: int = 10, *, entropy_bits: float = 6.0, vocab: int = 256
) -> list[dict]:
    return [
        {
            "lm": lm,
            "runs": runs,
            "entropy_bits": entropy_bits,
            "mean_utilization": mean_utilization(
                lm, runs, entropy_bits=entropy_bits, vocab=vocab
            ),
        }
        for lm in lms
    ]
