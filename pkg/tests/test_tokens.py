import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from collocate.crypto import derive_seed, keyed_stream, sha256_trunc, token_nbytes, truncate
from collocate.params import ModeFlags, ProtocolParams
from collocate.tokens import advance_tick, broadcast_interval, init_device, mint, prune, record_heard


def params(**kw):
    return ProtocolParams(**kw)


def test_truncate_keeps_leading_bits():
    digest = bytes.fromhex("ff" * 32)
    assert truncate(digest, 100) == (2**100 - 1).to_bytes(13, "big")
    assert truncate(bytes.fromhex("80" + "00" * 31), 65) == (1 << 64).to_bytes(9, "big")
    assert token_nbytes(100) == 13


@given(st.binary(max_size=64), st.integers(64, 256))
def test_truncated_tokens_fit_their_width(data, bits):
    t = sha256_trunc(data, bits)
    assert len(t) == token_nbytes(bits)
    assert int.from_bytes(t, "big") < 2**bits


def test_keyed_stream_and_seeds_are_stable():
    assert keyed_stream(b"x", 1, 2, 128) == keyed_stream(b"x", 1, 2, 128)
    assert keyed_stream(b"x", 1, 2, 128) != keyed_stream(b"x", 1, 3, 128)
    assert derive_seed("a", 1) != derive_seed("a1")
    assert 0 <= derive_seed(b"z", -5) < 2**64


def test_first_token_is_always_minted():
    dev = init_device(0, params(p_new=1e-9), seed=5)
    assert len(dev.own_log) == 1 and dev.own_log[0].epoch_tick == 0


def test_two_weeks_of_minute_ticks_at_full_rotation():
    p = params(p_new=1.0, retention_ticks=10**6, contagious_window_i=1000, growth_bound_g=1000)
    t0 = time.perf_counter()
    dev = init_device(0, p, seed=1)
    advance_tick(dev, 20159, p)
    assert time.perf_counter() - t0 < 1.0
    assert len(dev.own_log) == 20160
    assert len({r.token for r in dev.own_log}) == 20160


def test_mean_rotation_gap():
    p = params(p_new=1 / 30)
    dev = init_device(0, p, seed=77)
    p_big = p.replace(retention_ticks=10**6)
    advance_tick(dev, 100_000, p_big)
    epochs = np.array([r.epoch_tick for r in dev.own_log])
    assert 29 <= np.diff(epochs).mean() <= 31


@given(st.integers(0, 2**63), st.lists(st.integers(1, 400), min_size=1, max_size=8))
@settings(max_examples=40, deadline=None)
def test_stepping_equals_jumping(seed, steps):
    p = params(p_new=0.05, retention_ticks=300, contagious_window_i=300)
    a = init_device(0, p, seed)
    b = init_device(1, p, seed)
    now = 0
    for s in steps:
        now += s
        advance_tick(a, now, p)
    for t in range(1, now + 1):
        advance_tick(b, t, p)
    assert a.own_log == b.own_log


def test_device_id_does_not_enter_the_stream():
    p = params()
    a, b = init_device(3, p, 9), init_device(4, p, 9)
    advance_tick(a, 500, p)
    advance_tick(b, 500, p)
    assert a.own_log == b.own_log


def test_non_monotone_tick_rejected():
    p = params()
    dev = init_device(0, p, 1)
    advance_tick(dev, 10, p)
    with pytest.raises(ValueError):
        advance_tick(dev, 10, p)


def test_prune_keeps_token_on_air():
    p = params(p_new=1e-9, retention_ticks=100, contagious_window_i=100)
    dev = init_device(0, p, 2)
    advance_tick(dev, 10_000, p)
    assert len(dev.own_log) == 1
    assert broadcast_interval(dev, 0) == (0, 10_000)


@given(st.integers(0, 2**63), st.integers(50, 3000))
@settings(max_examples=30, deadline=None)
def test_own_log_covers_exactly_the_retention_period(seed, now):
    p = params(p_new=0.2, retention_ticks=40, contagious_window_i=40)
    dev = init_device(0, p, seed)
    advance_tick(dev, now, p)
    cutoff = now - 40
    # every retained token was on air at or after the cutoff, and none that was is missing
    for j in range(len(dev.own_log)):
        assert broadcast_interval(dev, j)[1] >= cutoff
    assert dev.own_log[0].epoch_tick <= max(cutoff, 0) or dev.own_log[0].epoch_tick == 0


def test_heard_log_pruned_by_tick():
    p = params(retention_ticks=100, contagious_window_i=100)
    dev = init_device(0, p, 1)
    for t in range(0, 200, 10):
        record_heard(dev, bytes(16), t)
    record_heard(dev, b"\x01" * 16, 5)
    prune(dev, 200, p)
    assert all(e.tick >= 100 for e in dev.heard_log)
    assert len(dev.heard_log) == 10


def test_validity_tokens_hash_their_preimage():
    p = params(mode_flags=ModeFlags(validity_check=True))
    rec = mint(11, 7, p)
    assert rec.preimage is not None
    assert sha256_trunc(rec.preimage, 128) == rec.token
