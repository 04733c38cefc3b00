"""Simulated radio layer: broadcasts, RSSI gating, freshness tags, per-encounter hashing."""

from __future__ import annotations

from dataclasses import dataclass

from .crypto import keyed_stream, sha256_trunc
from .params import ProtocolParams
from .tokens import DeviceState, TokenRecord, record_heard

NONCE_LABEL = b"acd/nonce"


class MalformedMessage(ValueError):
    """A freshness-mode message is missing its nonce, epoch or location."""


@dataclass(frozen=True)
class BroadcastMessage:
    token: bytes
    epoch_index: int | None = None
    loc_bucket: int | None = None
    nonce: bytes | None = None


@dataclass(frozen=True)
class ReceptionEvent:
    message: BroadcastMessage
    rssi_dbm: float
    tick: int
    receiver_loc_bucket: int | None = None


def freshness_hash(nonce: bytes, epoch_index: int, loc_bucket: int, bits: int) -> bytes:
    """H(nonce || epoch || bucket), epoch and bucket as 8-byte big-endian unsigned."""
    return sha256_trunc(nonce + epoch_index.to_bytes(8, "big") + loc_bucket.to_bytes(8, "big"), bits)


def make_broadcast(state: DeviceState, tick: int, loc_bucket: int, params: ProtocolParams) -> BroadcastMessage:
    """What ``state`` puts on air at ``tick``.

    Outside freshness mode this is just the current token.  In freshness mode
    a per-tick nonce is bound to the tick and location and the resulting hash
    is appended to the device's emitted log, since those are the values a
    diagnosed device must later upload.
    """
    if tick != state.now:
        raise ValueError(f"device clock at {state.now}, asked to broadcast at {tick}")
    if not params.mode_flags.freshness_check:
        return BroadcastMessage(state.current.token)
    bits = params.token_len_bits
    nonce = keyed_stream(NONCE_LABEL, state.rng_seed, tick, bits)
    token = freshness_hash(nonce, tick, loc_bucket, bits)
    emitted = state.emitted_log
    i = len(emitted) - 1
    while i >= 0 and emitted[i].epoch_tick == tick:
        if emitted[i].token == token:
            break
        i -= 1
    else:
        emitted.append(TokenRecord(token, tick))
    return BroadcastMessage(token, epoch_index=tick, loc_bucket=loc_bucket, nonce=nonce)


def accept_rssi(event: ReceptionEvent, threshold_dbm: float | None) -> bool:
    return threshold_dbm is None or event.rssi_dbm >= threshold_dbm


def verify_freshness(event: ReceptionEvent, local_tick: int, tick_tolerance: int, params: ProtocolParams) -> bool:
    msg = event.message
    if msg.nonce is None or msg.epoch_index is None or msg.loc_bucket is None:
        raise MalformedMessage("freshness fields missing from broadcast")
    if abs(msg.epoch_index - local_tick) > tick_tolerance:
        return False
    if event.receiver_loc_bucket is None or msg.loc_bucket != event.receiver_loc_bucket:
        return False
    if msg.epoch_index < 0 or msg.loc_bucket < 0:
        return False
    return freshness_hash(msg.nonce, msg.epoch_index, msg.loc_bucket, params.token_len_bits) == msg.token


def combine(t_a: bytes, t_b: bytes, bits: int | None = None) -> bytes:
    """Order-independent pair hash H(min || max), truncated to the token width."""
    if len(t_a) != len(t_b):
        raise ValueError("tokens differ in width")
    if bits is None:
        bits = len(t_a) * 8
    lo, hi = (t_a, t_b) if t_a <= t_b else (t_b, t_a)
    return sha256_trunc(lo + hi, bits)


def record_encounter(receiver: DeviceState, event: ReceptionEvent, params: ProtocolParams,
                     own_token: bytes | None = None) -> DeviceState:
    """Store a gated reception.  Only the token (or pair hash) is kept.

    ``own_token`` is what the receiver itself has on air at that moment; it
    defaults to the receiver's current token.
    """
    heard = event.message.token
    if params.mode_flags.encounter == "per-encounter":
        mine = receiver.current.token if own_token is None else own_token
        heard = combine(mine, heard, params.token_len_bits)
    return record_heard(receiver, heard, event.tick)


def receive(receiver: DeviceState, event: ReceptionEvent, params: ProtocolParams,
            own_token: bytes | None = None) -> bool:
    """Run the RSSI gate and (when enabled) the freshness check, then record.

    Returns whether anything was stored.
    """
    if not accept_rssi(event, params.rssi_threshold_dbm):
        return False
    if params.mode_flags.freshness_check:
        try:
            if not verify_freshness(event, receiver.now, params.freshness_tolerance_ticks, params):
                return False
        except MalformedMessage:
            return False
    record_encounter(receiver, event, params, own_token)
    return True
