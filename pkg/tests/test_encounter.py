import pytest
from hypothesis import given, strategies as st

from collocate.crypto import sha256_trunc
from collocate.encounter import (
    BroadcastMessage,
    MalformedMessage,
    ReceptionEvent,
    combine,
    freshness_hash,
    make_broadcast,
    receive,
    verify_freshness,
)
from collocate.params import ModeFlags, ProtocolParams
from collocate.tokens import advance_tick, init_device

RAW = ProtocolParams(rssi_threshold_dbm=-70.0)
FRESH = ProtocolParams(mode_flags=ModeFlags(freshness_check=True))
PAIR = ProtocolParams(mode_flags=ModeFlags(encounter="per-encounter"))


def test_rssi_gate():
    dev = init_device(1, RAW, 1)
    msg = BroadcastMessage(bytes(16))
    assert not receive(dev, ReceptionEvent(msg, -80.0, 0), RAW)
    assert receive(dev, ReceptionEvent(msg, -70.0, 0), RAW)
    assert [e.value for e in dev.heard_log] == [bytes(16)]


@given(st.binary(min_size=16, max_size=16), st.binary(min_size=16, max_size=16))
def test_combine_is_symmetric(a, b):
    assert combine(a, b) == combine(b, a)
    lo, hi = sorted([a, b])
    assert combine(a, b) == sha256_trunc(lo + hi, 128)


def test_combine_width_mismatch():
    with pytest.raises(ValueError):
        combine(bytes(16), bytes(13))


def test_pair_hash_agrees_on_both_sides():
    a, b = init_device(0, PAIR, 1), init_device(1, PAIR, 2)
    ma, mb = make_broadcast(a, 0, 0, PAIR), make_broadcast(b, 0, 0, PAIR)
    receive(b, ReceptionEvent(ma, -50.0, 0), PAIR)
    receive(a, ReceptionEvent(mb, -50.0, 0), PAIR)
    assert a.heard_log[0].value == b.heard_log[0].value != ma.token


def test_freshness_accepts_live_and_rejects_replays():
    sender, receiver = init_device(0, FRESH, 1), init_device(1, FRESH, 2)
    msg = make_broadcast(sender, 0, 3, FRESH)
    assert msg.token == freshness_hash(msg.nonce, 0, 3, 128)
    assert receive(receiver, ReceptionEvent(msg, -50.0, 0, 3), FRESH)
    # wrong place
    assert not receive(receiver, ReceptionEvent(msg, -50.0, 0, 4), FRESH)
    advance_tick(receiver, 100, FRESH)
    assert not receive(receiver, ReceptionEvent(msg, -50.0, 100, 3), FRESH)
    assert len(receiver.heard_log) == 1


def test_freshness_tolerance_edge():
    sender = init_device(0, FRESH, 1)
    msg = make_broadcast(sender, 0, 0, FRESH)
    assert verify_freshness(ReceptionEvent(msg, -50.0, 1, 0), 1, 1, FRESH)
    assert not verify_freshness(ReceptionEvent(msg, -50.0, 2, 0), 2, 1, FRESH)


def test_tampered_tag_rejected():
    sender = init_device(0, FRESH, 1)
    msg = make_broadcast(sender, 0, 0, FRESH)
    forged = BroadcastMessage(msg.token, 0, 0, bytes(len(msg.nonce)))
    assert not verify_freshness(ReceptionEvent(forged, -50.0, 0, 0), 0, 1, FRESH)


def test_missing_freshness_fields():
    with pytest.raises(MalformedMessage):
        verify_freshness(ReceptionEvent(BroadcastMessage(bytes(16)), -50.0, 0, 0), 0, 1, FRESH)
    dev = init_device(1, FRESH, 1)
    assert not receive(dev, ReceptionEvent(BroadcastMessage(bytes(16)), -50.0, 0, 0), FRESH)


def test_emitted_log_deduplicates_per_tick_and_place():
    dev = init_device(0, FRESH, 1)
    make_broadcast(dev, 0, 0, FRESH)
    make_broadcast(dev, 0, 0, FRESH)
    make_broadcast(dev, 0, 1, FRESH)
    assert len(dev.emitted_log) == 2


def test_broadcast_requires_synced_clock():
    dev = init_device(0, RAW, 1)
    with pytest.raises(ValueError):
        make_broadcast(dev, 5, 0, RAW)
