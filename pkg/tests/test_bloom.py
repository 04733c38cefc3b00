import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from collocate.bloom import (
    BloomFilter,
    FilterChain,
    IncompatibleFilters,
    SerializationError,
    deserialize_filters,
    new_filter,
    probe_indices,
    saturate,
    serialize_filters,
    union,
)
from collocate.params import derive_k, filter_capacity, optimal_bits

tokens16 = st.binary(min_size=16, max_size=16)


def rand_tokens(rng, n):
    return [rng.bytes(16) for _ in range(n)]


@settings(max_examples=60, deadline=None)
@given(st.lists(tokens16, max_size=200), st.integers(64, 5000), st.integers(1, 12), st.integers(0, 2**64 - 1))
def test_no_false_negatives(tokens, m, k, seed):
    f = BloomFilter(m, k, seed).insert_many(tokens)
    assert all(f.contains(t) for t in tokens)
    assert f.contains_many(tokens).all()


@settings(max_examples=30, deadline=None)
@given(st.lists(tokens16, max_size=50), st.integers(64, 3000), st.integers(1, 8))
def test_bits_match_reference_probes(tokens, m, k):
    f = BloomFilter(m, k, 5).insert_many(tokens)
    want = set()
    for t in tokens:
        want.update(probe_indices(5, t, k, m))
    got = set(np.flatnonzero(np.unpackbits(f.bits, bitorder="little")[:m]).tolist())
    assert got == want
    assert f.popcount() == len(want)


@settings(max_examples=40, deadline=None)
@given(st.lists(tokens16, max_size=60), st.lists(tokens16, max_size=60))
def test_union_is_the_filter_of_the_union(a, b):
    fa = BloomFilter(2000, 5, 3).insert_many(a)
    fb = BloomFilter(2000, 5, 3).insert_many(b)
    fab = BloomFilter(2000, 5, 3).insert_many(a + b)
    assert np.array_equal(union(fa, fb).bits, fab.bits)
    assert union(fa, fb).bits.tolist() == union(fb, fa).bits.tolist()


def test_union_rejects_shape_mismatch():
    with pytest.raises(IncompatibleFilters):
        union(new_filter(100, 3, 1), new_filter(100, 3, 2))
    with pytest.raises(IncompatibleFilters):
        union(new_filter(100, 3, 1), new_filter(101, 3, 1))


def test_saturate_keeps_pad_bits_clear():
    f = saturate(new_filter(13, 2, 0))
    assert f.popcount() == 13
    assert f.fill_ratio() == 1.0
    assert f.bits[-1] == 0b11111


def test_false_positive_rate_at_capacity():
    rng = np.random.default_rng(1)
    n = 10_000
    m, k = optimal_bits(n, 0.01), derive_k(0.01)
    f = BloomFilter(m, k, 42)
    members = rand_tokens(rng, n)
    f.insert_many(members)
    assert f.contains_many(members).all()
    probes = rand_tokens(rng, 200_000)
    rate = f.contains_many(probes).mean()
    assert 0.005 <= rate <= 0.02


def test_chain_growth_sizes():
    s = optimal_bits(1000, 0.01)
    chain = FilterChain(0.01, s, 2.0, seed=1)
    cap = filter_capacity(s, derive_k(0.01))
    rng = np.random.default_rng(2)
    for t in rand_tokens(rng, 3 * cap):
        chain.insert(t)
    assert chain.sizes() == [s, 2 * s, 4 * s]


def test_chain_growth_with_fractional_alpha():
    chain = FilterChain(0.5, 15, 1.5, seed=0)
    rng = np.random.default_rng(3)
    for t in rand_tokens(rng, 25):
        chain.insert(t)
    # capacities 10 and 15: the 25th insert fills the second filter and opens a third
    assert chain.sizes() == [15, 23, 34]
    assert all(math.ceil(15 * 1.5**g) == m for g, m in enumerate(chain.sizes()))


def test_chain_merge_and_expiry():
    chain = FilterChain(0.01, 2000, 2.0, seed=9)
    rng = np.random.default_rng(4)
    batch = rand_tokens(rng, 10)
    report = BloomFilter(*chain.active(0).shape).insert_many(batch)
    chain.merge(report, now_tick=5)
    assert chain.contains_many(batch).all()
    assert chain.epochs == [[0, 5]]
    assert chain.expire(cutoff=6) == 1
    assert len(chain) == 0
    assert chain.active(10).m_bits == 2000


def test_serialization_round_trip_multi_filter():
    chain = FilterChain(0.1, 64, 2.0, seed=3)
    rng = np.random.default_rng(5)
    for i, t in enumerate(rand_tokens(rng, 200)):
        chain.insert(t, now_tick=i)
    assert len(chain) > 2
    data = chain.to_bytes()
    back = FilterChain.from_bytes(data, 0.1, 64, 2.0, seed=3)
    assert back == chain
    assert back.to_bytes() == data
    assert back.generations == chain.generations


@pytest.mark.parametrize("mutate,msg", [
    (lambda d: b"XXXX" + d[4:], "magic"),
    (lambda d: d[:4] + b"\x09\x00" + d[6:], "version"),
    (lambda d: d[:-1], "truncated"),
    (lambda d: d + b"\x00", "trailing"),
])
def test_corrupt_snapshots_rejected(mutate, msg):
    f = BloomFilter(13, 2, 1).insert(b"a" * 16)
    data = serialize_filters([f], [(0, 0)])
    with pytest.raises(SerializationError, match=msg):
        deserialize_filters(mutate(data))


def test_nonzero_pad_bits_rejected():
    f = BloomFilter(13, 2, 1)
    data = bytearray(serialize_filters([f], [(0, 0)]))
    data[-1] = 0xFF
    with pytest.raises(SerializationError, match="pad"):
        deserialize_filters(bytes(data))
