"""Hot numeric kernels: jitted with numba, with a pure-numpy fallback.

Set SPARSAMP_PURE_NUMPY=1 to force the numpy path (or run without numba
installed). Both paths are kept bit-for-bit equivalent and are compared
by tests and by ``sparsamp bench --kernels``.
"""

from __future__ import annotations

import math
import os

import numpy as np

_MAX_BELOW_ONE = math.nextafter(1.0, 0.0)

_FORCE_NUMPY = os.environ.get("SPARSAMP_PURE_NUMPY", "") not in ("", "0")

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:
    _HAVE_NUMBA = False


def _sample_index_np(cum: np.ndarray, r: float) -> int:
    return int(np.searchsorted(cum, r, side="right"))


def _grid_token_counts_np(cum: np.ndarray, grid_bits: int, offset: int) -> np.ndarray:
    """Token histogram of sampling at every point of a 2**grid_bits grid.

    Each grid point u is shifted by ``offset`` (wrapping), converted to the
    nearest binary64 in [0, 1), and sampled against ``cum``. grid_bits must
    be <= 32; the downscaled grids used for exhaustive checks are 16-bit.
    """
    size = 1 << grid_bits
    u = np.arange(size, dtype=np.uint64)
    shifted = (u + np.uint64(offset % size)) & np.uint64(size - 1)
    r = shifted.astype(np.float64) / float(size)
    r[r >= 1.0] = _MAX_BELOW_ONE
    idx = np.searchsorted(cum, r, side="right")
    return np.bincount(idx, minlength=cum.shape[0]).astype(np.int64)


def _candidate_window_np(
    u: int, q: int, rem: int, n: int, se0: float, se1: float, c_true: int
) -> tuple[int, int, int]:
    """Brute-force enumeration of shifted grid points inside [se0, se1).

    For every candidate index j in [0, n), the shift offset is recovered as
    j*q + (j*rem)//n where q, rem = divmod(2**64, n); both products stay
    below 2**64 for n <= 2**32, so uint64 arithmetic is exact. Returns the
    candidate count, the rank of the true index's value among candidates,
    and the number of exact float ties with it (boundary collisions).
    """
    j = np.arange(n, dtype=np.uint64)
    c = j * np.uint64(q) + (j * np.uint64(rem)) // np.uint64(n)
    units = np.uint64(u) + c  # wraps mod 2**64 like the grid does
    mrn = units.astype(np.float64) / 18446744073709551616.0
    mrn[mrn >= 1.0] = _MAX_BELOW_ONE
    true_units = (u + c_true) % 18446744073709551616
    mrn_true = true_units / 18446744073709551616.0
    if mrn_true >= 1.0:
        mrn_true = _MAX_BELOW_ONE
    inside = (mrn >= se0) & (mrn < se1)
    count = int(np.count_nonzero(inside))
    rank = int(np.count_nonzero(inside & (mrn < mrn_true)))
    ties = int(np.count_nonzero(inside & (mrn == mrn_true))) - 1
    return count, rank, ties


if _HAVE_NUMBA:

    @njit(cache=True)
    def _sample_index_nb(cum, r):
        lo = 0
        hi = cum.shape[0]
        while lo < hi:
            mid = (lo + hi) // 2
            if cum[mid] > r:
                hi = mid
            else:
                lo = mid + 1
        return lo

    @njit(cache=True)
    def _grid_token_counts_nb_impl(cum, grid_bits, offset, max_below_one):
        size = np.int64(1) << np.int64(grid_bits)
        mask = np.uint64(size - 1)
        scale = 1.0 / size
        counts = np.zeros(cum.shape[0], dtype=np.int64)
        off = np.uint64(offset % size)
        for i in range(size):
            shifted = (np.uint64(i) + off) & mask
            r = np.float64(shifted) * scale
            if r >= 1.0:
                r = max_below_one
            lo = 0
            hi = cum.shape[0]
            while lo < hi:
                mid = (lo + hi) // 2
                if cum[mid] > r:
                    hi = mid
                else:
                    lo = mid + 1
            counts[lo] += 1
        return counts

    @njit(cache=True)
    def _candidate_window_nb_impl(u, q, rem, n, se0, se1, c_true, max_below_one):
        inv = 1.0 / 18446744073709551616.0
        mrn_true = np.float64(np.uint64(u) + np.uint64(c_true)) * inv
        if mrn_true >= 1.0:
            mrn_true = max_below_one
        count = 0
        rank = 0
        ties = -1
        un = np.uint64(n)
        uq = np.uint64(q)
        ur = np.uint64(rem)
        uu = np.uint64(u)
        for j in range(n):
            uj = np.uint64(j)
            c = uj * uq + (uj * ur) // un
            mrn = np.float64(uu + c) * inv
            if mrn >= 1.0:
                mrn = max_below_one
            if se0 <= mrn < se1:
                count += 1
                if mrn < mrn_true:
                    rank += 1
                elif mrn == mrn_true:
                    ties += 1
        return count, rank, ties

    def _grid_token_counts_nb(cum, grid_bits, offset):
        return _grid_token_counts_nb_impl(cum, grid_bits, offset, _MAX_BELOW_ONE)

    def _candidate_window_nb(u, q, rem, n, se0, se1, c_true):
        count, rank, ties = _candidate_window_nb_impl(
            np.uint64(u), np.uint64(q), np.uint64(rem), n,
            se0, se1, np.uint64(c_true), _MAX_BELOW_ONE,
        )
        return int(count), int(rank), int(ties)


IMPLS = {"numpy": (_sample_index_np, _grid_token_counts_np, _candidate_window_np)}
if _HAVE_NUMBA:
    IMPLS["numba"] = (_sample_index_nb, _grid_token_counts_nb, _candidate_window_nb)

ACTIVE = "numba" if (_HAVE_NUMBA and not _FORCE_NUMPY) else "numpy"
sample_index, grid_token_counts, candidate_window = IMPLS[ACTIVE]
