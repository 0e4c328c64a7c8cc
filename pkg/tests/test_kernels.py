"""The numba and pure-numpy kernel paths must agree bit for bit."""

import os
import subprocess
import sys

import numpy as np
import pytest

from sparsamp import _kernels

from dist_helpers import random_dist


def test_env_flag_forces_numpy_path():
    probe = "from sparsamp import _kernels; print(_kernels.ACTIVE)"
    out = subprocess.run(
        [sys.executable, "-c", probe],
        env={**os.environ, "SPARSAMP_PURE_NUMPY": "1"},
        capture_output=True, check=True,
    )
    assert out.stdout.strip() == b"numpy"

needs_both = pytest.mark.skipif(
    "numba" not in _kernels.IMPLS, reason="numba unavailable"
)


@needs_both
def test_sample_index_paths_agree():
    rng = np.random.default_rng(0)
    np_impl = _kernels.IMPLS["numpy"][0]
    nb_impl = _kernels.IMPLS["numba"][0]
    for _ in range(50):
        dist = random_dist(rng, int(rng.integers(1, 200)))
        rs = list(rng.random(20)) + [0.0] + [float(c) for c in dist.cum[:-1]]
        for r in rs:
            assert np_impl(dist.cum, r) == nb_impl(dist.cum, r)


@needs_both
def test_grid_counts_paths_agree():
    rng = np.random.default_rng(1)
    np_impl = _kernels.IMPLS["numpy"][1]
    nb_impl = _kernels.IMPLS["numba"][1]
    for _ in range(10):
        dist = random_dist(rng, int(rng.integers(2, 40)))
        offset = int(rng.integers(0, 1 << 12))
        a = np_impl(dist.cum, 12, offset)
        b = nb_impl(dist.cum, 12, offset)
        assert np.array_equal(a, b)


@needs_both
def test_candidate_window_paths_agree():
    rng = np.random.default_rng(2)
    np_impl = _kernels.IMPLS["numpy"][2]
    nb_impl = _kernels.IMPLS["numba"][2]
    for _ in range(200):
        n = int(rng.integers(1, 1 << 12))
        q, rem = divmod(1 << 64, n)
        k = int(rng.integers(0, n))
        u = int(rng.integers(0, 1 << 64, dtype=np.uint64))
        se0 = float(rng.uniform(0, 0.9))
        se1 = float(rng.uniform(se0 + 1e-6, 1.0))
        c_true = (k << 64) // n
        args = (u, q % (1 << 64), rem, n, se0, se1, c_true)
        assert np_impl(*args) == nb_impl(*args)


def test_grid_counts_total_and_shift_invariance():
    """Shifting the grid permutes it, so the histogram cannot change."""
    rng = np.random.default_rng(3)
    grid_counts = _kernels.grid_token_counts
    dist = random_dist(rng, 17)
    base = grid_counts(dist.cum, 16, 0)
    assert int(base.sum()) == 1 << 16
    shifted = grid_counts(dist.cum, 16, 54321)
    assert np.array_equal(base, shifted)
