"""Per-device token generation, rotation and log retention.

A device's randomness is counter-based: the rotation coin for tick ``t`` and
the token minted at ``t`` are pure functions of ``(rng_seed, t)``.  Advancing
one tick at a time or jumping many ticks at once therefore yields identical
logs, and the device id never enters the derivation.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field
from typing import NamedTuple

from . import _kernels
from .crypto import derive_seed, keyed_stream, sha256_trunc
from .params import ProtocolParams

TOKEN_LABEL = b"acd/token"
PREIMAGE_LABEL = b"acd/preimage"


@dataclass(frozen=True)
class TokenRecord:
    token: bytes
    epoch_tick: int
    preimage: bytes | None = None


class HeardEntry(NamedTuple):
    value: bytes
    tick: int


@dataclass
class DeviceState:
    device_id: int
    rng_seed: int
    now: int
    own_log: list[TokenRecord]
    heard_log: list[HeardEntry] = field(default_factory=list)
    # freshness mode: the per-tick broadcast values actually emitted
    emitted_log: list[TokenRecord] = field(default_factory=list)
    rotation_seed: int = 0
    heard_sorted: bool = True

    @property
    def current(self) -> TokenRecord:
        return self.own_log[-1]


def mint(seed: int, tick: int, params: ProtocolParams) -> TokenRecord:
    bits = params.token_len_bits
    if params.mode_flags.validity_check:
        preimage = keyed_stream(PREIMAGE_LABEL, seed, tick, bits)
        return TokenRecord(sha256_trunc(preimage, bits), tick, preimage)
    return TokenRecord(keyed_stream(TOKEN_LABEL, seed, tick, bits), tick)


def init_device(device_id: int, params: ProtocolParams, seed: int, start_tick: int = 0) -> DeviceState:
    """Fresh device broadcasting a newly minted token from ``start_tick``.

    The first token is always minted, whatever ``p_new`` says.
    """
    return DeviceState(
        device_id=device_id,
        rng_seed=seed,
        now=start_tick,
        own_log=[mint(seed, start_tick, params)],
        rotation_seed=derive_seed("rotate", seed),
    )


def advance_tick(state: DeviceState, now_tick: int, params: ProtocolParams) -> DeviceState:
    """Move the device clock to ``now_tick``, rotating with probability p_new per elapsed tick."""
    if now_tick <= state.now:
        raise ValueError(f"non-monotone tick: {now_tick} <= {state.now}")
    rotations = _kernels.rotation_ticks(state.rotation_seed, state.now + 1, now_tick + 1, params.p_new)
    if rotations.size:
        cutoff = now_tick - params.retention_ticks
        # a rotation whose successor starts at or before the cutoff would be pruned at once
        first = int((rotations[1:] <= cutoff).sum())
        for tick in rotations[first:].tolist():
            state.own_log.append(mint(state.rng_seed, tick, params))
    state.now = now_tick
    return prune(state, now_tick, params)


def prune(state: DeviceState, now_tick: int, params: ProtocolParams) -> DeviceState:
    """Drop log entries older than the retention period.

    Heard and emitted entries go by their tick.  An own token goes by the last
    tick it was broadcast (the tick before its successor started), so the
    token currently on air is never discarded.
    """
    cutoff = now_tick - params.retention_ticks
    own = state.own_log
    drop = 0
    while drop + 1 < len(own) and own[drop + 1].epoch_tick <= cutoff:
        drop += 1
    if drop:
        del own[:drop]
    heard = state.heard_log
    if heard:
        if state.heard_sorted:
            if heard[0].tick < cutoff:
                del heard[:bisect_left(heard, cutoff, key=_tick)]
        else:
            state.heard_log = [e for e in heard if e.tick >= cutoff]
    emitted = state.emitted_log
    if emitted and emitted[0].epoch_tick < cutoff:
        del emitted[:bisect_left(emitted, cutoff, key=_epoch)]
    return state


def _tick(entry: HeardEntry) -> int:
    return entry.tick


def _epoch(record: TokenRecord) -> int:
    return record.epoch_tick


def record_heard(state: DeviceState, stored_value: bytes, receipt_tick: int) -> DeviceState:
    heard = state.heard_log
    if heard and receipt_tick < heard[-1].tick:
        state.heard_sorted = False
    heard.append(HeardEntry(stored_value, receipt_tick))
    return state


def broadcast_interval(state: DeviceState, index: int) -> tuple[int, int]:
    """First and last tick at which ``own_log[index]`` was on air."""
    rec = state.own_log[index]
    if index + 1 < len(state.own_log):
        return rec.epoch_tick, state.own_log[index + 1].epoch_tick - 1
    return rec.epoch_tick, state.now
