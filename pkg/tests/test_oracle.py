"""sparse_update against brute-force enumeration of every candidate.

The oracle recomputes, for each candidate index j in [0, N), the shifted
grid value the implementation's own shift would produce, keeps the ones
inside the sampled token's slice, and takes the count and the true
index's rank in value order. It never calls sparse_update.
"""

import numpy as np
import pytest

from sparsamp import _kernels
from sparsamp.codec import ChunkState, sample, sparse_update
from sparsamp.randomness import shift_units, units_to_real

from dist_helpers import random_dist

GRID = 1 << 64


def oracle_window(u, n, k, se0, se1):
    q, rem = divmod(GRID, n)
    c_true = (k << 64) // n
    return _kernels.candidate_window(u, q % GRID, rem, n, se0, se1, c_true)


def run_cases(n_cases, seed, max_n_bits=16, vocab_range=(2, 64), dist_reuse=1):
    rng = np.random.default_rng(seed)
    mismatches = []
    boundary_ties = 0
    dist = None
    for case in range(n_cases):
        if dist is None or case % dist_reuse == 0:
            dist = random_dist(rng, int(rng.integers(*vocab_range)))
        n = int(2 ** rng.uniform(0, max_n_bits))
        k = int(rng.integers(0, n))
        u = int(rng.integers(0, GRID, dtype=np.uint64))
        r = units_to_real(u)
        draw = sample(dist, units_to_real(shift_units(u, k, n)))
        state = sparse_update(draw, ChunkState(n, k), r)
        count, rank, ties = oracle_window(u, n, k, draw.se0, draw.se1)
        if ties > 0:
            boundary_ties += 1
            continue
        if (count, rank) != (state.n_m, state.k_m):
            mismatches.append((u, n, k, draw, state, (count, rank)))
    return mismatches, boundary_ties


def test_sparse_update_matches_enumeration():
    mismatches, ties = run_cases(3000, seed=1234)
    assert mismatches == [], f"first mismatch: {mismatches[0]}"
    # collisions happen with probability ~N * 2**-53; at this scale none
    assert ties == 0


def test_oracle_agrees_on_worked_examples(quarter_dist):
    u = int(0.1 * GRID)
    count, rank, ties = oracle_window(u, 8, 3, 0.25, 0.75)
    assert (count, rank, ties) == (4, 1, 0)
    u = int(0.9 * GRID)
    count, rank, ties = oracle_window(u, 4, 3, 0.25, 0.75)
    assert (count, rank, ties) == (2, 1, 0)


def test_oracle_full_interval():
    count, rank, ties = oracle_window(12345, 16, 7, 0.0, 1.0)
    assert (count, rank, ties) == (16, 7, 0)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_oracle_tiny_n(n):
    rng = np.random.default_rng(n)
    dist = random_dist(rng, 8)
    u = int(rng.integers(0, GRID, dtype=np.uint64))
    k = n - 1
    draw = sample(dist, units_to_real(shift_units(u, k, n)))
    state = sparse_update(draw, ChunkState(n, k), units_to_real(u))
    count, rank, _ = oracle_window(u, n, k, draw.se0, draw.se1)
    assert (count, rank) == (state.n_m, state.k_m)
