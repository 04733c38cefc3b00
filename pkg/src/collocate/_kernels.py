"""Hot inner loops: Bloom probing, bit population counts, rotation coin flips.

Every kernel exists twice: a numba ``@njit`` version and a vectorised numpy
version with identical results.  The numba path is used when numba imports
and ``COLLOCATE_NO_NUMBA`` is unset (or ``0``).  Both paths stay importable
so tests and ``benchmarks/bench_kernels.py`` can compare them directly.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("COLLOCATE_NO_NUMBA", "") in ("", "0")

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
TWO_POW_M53 = 1.0 / 9007199254740992.0

_POPCOUNT8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


# --------------------------------------------------------------------------
# numpy implementations


def rotation_ticks_numpy(seed: int, start: int, stop: int, p_new: float) -> np.ndarray:
    if stop <= start:
        return np.empty(0, dtype=np.int64)
    ticks = np.arange(start, stop, dtype=np.int64)
    z = np.uint64(seed) + (ticks.astype(np.uint64) + np.uint64(1)) * GOLDEN
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    z = z ^ (z >> np.uint64(31))
    u = (z >> np.uint64(11)).astype(np.float64) * TWO_POW_M53
    return ticks[u < p_new]


def _probe_start(h1: np.ndarray, h2: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    mm = np.uint64(m)
    return h1 % mm, h2 % mm


def bloom_set_numpy(bits: np.ndarray, h1: np.ndarray, h2: np.ndarray, k: int, m: int) -> None:
    if h1.size == 0:
        return
    idx, step = _probe_start(h1, h2, m)
    mm = np.uint64(m)
    for _ in range(k):
        np.bitwise_or.at(
            bits, (idx >> np.uint64(3)).astype(np.intp),
            (np.uint8(1) << (idx & np.uint64(7)).astype(np.uint8)),
        )
        idx = idx + step
        idx = np.where(idx >= mm, idx - mm, idx)


def bloom_test_numpy(bits: np.ndarray, h1: np.ndarray, h2: np.ndarray, k: int, m: int) -> np.ndarray:
    out = np.ones(h1.size, dtype=np.bool_)
    if h1.size == 0:
        return out
    idx, step = _probe_start(h1, h2, m)
    mm = np.uint64(m)
    for _ in range(k):
        byte = bits[(idx >> np.uint64(3)).astype(np.intp)]
        out &= ((byte >> (idx & np.uint64(7)).astype(np.uint8)) & np.uint8(1)).astype(np.bool_)
        idx = idx + step
        idx = np.where(idx >= mm, idx - mm, idx)
    return out


def popcount_numpy(bits: np.ndarray) -> int:
    return int(_POPCOUNT8[bits].sum(dtype=np.int64))


# --------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _rotation_ticks_nb(seed, start, stop, p_new):
        n = max(stop - start, 0)
        out = np.empty(n, dtype=np.int64)
        count = 0
        one = np.uint64(1)
        for j in range(n):
            t = start + j
            z = np.uint64(seed) + (np.uint64(t) + one) * np.uint64(0x9E3779B97F4A7C15)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
            u = np.float64(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)
            if u < p_new:
                out[count] = t
                count += 1
        return out[:count]

    @numba.njit(cache=True)
    def _bloom_set_nb(bits, h1, h2, k, m):
        mm = np.uint64(m)
        for j in range(h1.size):
            idx = h1[j] % mm
            step = h2[j] % mm
            for _ in range(k):
                bits[idx >> np.uint64(3)] |= np.uint8(1) << np.uint8(idx & np.uint64(7))
                idx = idx + step
                if idx >= mm:
                    idx = idx - mm

    @numba.njit(cache=True)
    def _bloom_test_nb(bits, h1, h2, k, m):
        mm = np.uint64(m)
        out = np.ones(h1.size, dtype=np.bool_)
        for j in range(h1.size):
            idx = h1[j] % mm
            step = h2[j] % mm
            for _ in range(k):
                if (bits[idx >> np.uint64(3)] >> np.uint8(idx & np.uint64(7))) & np.uint8(1) == 0:
                    out[j] = False
                    break
                idx = idx + step
                if idx >= mm:
                    idx = idx - mm
        return out

    @numba.njit(cache=True)
    def _popcount_nb(bits, table):
        total = 0
        for j in range(bits.size):
            total += table[bits[j]]
        return total

    def rotation_ticks_numba(seed: int, start: int, stop: int, p_new: float) -> np.ndarray:
        return _rotation_ticks_nb(np.uint64(seed), np.int64(start), np.int64(stop), np.float64(p_new))

    def bloom_set_numba(bits, h1, h2, k, m) -> None:
        _bloom_set_nb(bits, h1, h2, np.int64(k), np.uint64(m))

    def bloom_test_numba(bits, h1, h2, k, m) -> np.ndarray:
        return _bloom_test_nb(bits, h1, h2, np.int64(k), np.uint64(m))

    def popcount_numba(bits) -> int:
        return int(_popcount_nb(bits, _POPCOUNT8))


if USE_NUMBA:
    rotation_ticks = rotation_ticks_numba
    bloom_set = bloom_set_numba
    bloom_test = bloom_test_numba
    popcount = popcount_numba
else:
    rotation_ticks = rotation_ticks_numpy
    bloom_set = bloom_set_numpy
    bloom_test = bloom_test_numpy
    popcount = popcount_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
