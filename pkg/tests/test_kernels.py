import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from collocate import _kernels as K
from collocate.bloom import probe_hashes, probe_indices

needs_numba = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


def splitmix_reference(seed, tick):
    mask = (1 << 64) - 1
    z = (seed + (tick + 1) * 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    z ^= z >> 31
    return (z >> 11) / 2.0**53


@given(st.integers(0, 2**64 - 1), st.integers(0, 10**6), st.floats(0.0, 1.0))
@settings(max_examples=50, deadline=None)
def test_rotation_coins_match_integer_reference(seed, start, p):
    got = K.rotation_ticks_numpy(seed, start, start + 200, p)
    want = [t for t in range(start, start + 200) if splitmix_reference(seed, t) < p]
    assert got.tolist() == want


def test_rotation_window_is_split_invariant():
    whole = K.rotation_ticks(42, 0, 5000, 0.1)
    parts = np.concatenate([K.rotation_ticks(42, a, a + 500, 0.1) for a in range(0, 5000, 500)])
    assert np.array_equal(whole, parts)


def test_bloom_probes_match_reference():
    m, k = 1009, 7
    tokens = [hashlib.sha256(bytes([i])).digest()[:16] for i in range(50)]
    h1, h2 = probe_hashes(99, tokens)
    bits = np.zeros((m + 7) // 8, dtype=np.uint8)
    K.bloom_set_numpy(bits, h1, h2, k, m)
    ref = np.zeros(m, dtype=bool)
    for t in tokens:
        ref[probe_indices(99, t, k, m)] = True
    unpacked = np.unpackbits(bits, bitorder="little")[:m].astype(bool)
    assert np.array_equal(unpacked, ref)


def test_popcount_numpy():
    bits = np.array([0, 1, 3, 255, 128], dtype=np.uint8)
    assert K.popcount_numpy(bits) == 0 + 1 + 2 + 8 + 1


@needs_numba
@given(st.integers(0, 2**64 - 1), st.integers(0, 10**9), st.integers(0, 3000), st.floats(0.0, 1.0))
@settings(max_examples=50, deadline=None)
def test_rotation_backends_agree(seed, start, n, p):
    assert np.array_equal(K.rotation_ticks_numpy(seed, start, start + n, p),
                          K.rotation_ticks_numba(seed, start, start + n, p))


@needs_numba
@given(st.integers(8, 1 << 20), st.integers(1, 40), st.integers(0, 300), st.integers(0, 2**64 - 1))
@settings(max_examples=40, deadline=None)
def test_bloom_backends_agree(m, k, n, seed):
    rng = np.random.default_rng(seed % 2**32)
    tokens = [rng.bytes(16) for _ in range(n)]
    h1, h2 = probe_hashes(seed, tokens)
    a = np.zeros((m + 7) // 8, dtype=np.uint8)
    b = a.copy()
    K.bloom_set_numpy(a, h1, h2, k, m)
    K.bloom_set_numba(b, h1, h2, k, m)
    assert np.array_equal(a, b)
    q1, q2 = probe_hashes(seed ^ 1, [rng.bytes(16) for _ in range(200)])
    assert np.array_equal(K.bloom_test_numpy(a, q1, q2, k, m), K.bloom_test_numba(a, q1, q2, k, m))
    assert K.popcount_numpy(a) == K.popcount_numba(a)


def test_backend_flag_reflects_environment():
    assert K.BACKEND in ("numba", "numpy")
    assert (K.BACKEND == "numba") == K.USE_NUMBA
