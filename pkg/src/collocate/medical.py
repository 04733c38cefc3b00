"""The medical authority's role: collect a diagnosed device's upload, check it, forward it.

A doctor never forwards preimages and, in Bloom mode, never forwards a token
list at all; the registry receives only a filter shaped like its active one.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field

from .bloom import BloomFilter, deserialize_filters, serialize_filters
from .crypto import derive_seed, sha256_trunc, token_nbytes
from .params import ProtocolParams
from .tokens import DeviceState, broadcast_interval

PACKAGE_MODES = ("raw-tokens", "preimages", "per-encounter-hashes", "bloom-report")
PACKAGE_MAGIC = b"ACDU"
PACKAGE_VERSION = 1
_PKG_HEADER = struct.Struct("<4sHBHQQQ")


class EmptyUploadError(ValueError):
    """Nothing in the device logs falls inside the requested window."""


class ModeMismatch(ValueError):
    pass


@dataclass
class UploadPackage:
    mode: str
    entries: list[bytes]
    diagnosis_tick: int
    window_ticks: int
    token_len_bits: int = 128
    # preimages mode: the tokens the uploader claims to have broadcast, parallel to ``entries``
    claims: list[bytes] = field(default_factory=list)
    report: BloomFilter | None = None

    def __post_init__(self) -> None:
        if self.mode not in PACKAGE_MODES:
            raise ValueError(f"unknown package mode {self.mode!r}")

    def to_bytes(self) -> bytes:
        width = token_nbytes(self.token_len_bits)
        head = _PKG_HEADER.pack(PACKAGE_MAGIC, PACKAGE_VERSION, PACKAGE_MODES.index(self.mode),
                                self.token_len_bits, self.diagnosis_tick, self.window_ticks, len(self.entries))
        body = [head]
        for value in self.entries + self.claims:
            if len(value) != width:
                raise ValueError("entry width does not match token_len_bits")
            body.append(value)
        if self.mode == "bloom-report":
            if self.report is None:
                raise ValueError("bloom-report package without a filter")
            body.append(serialize_filters([self.report], [(self.diagnosis_tick, self.diagnosis_tick)]))
        return b"".join(body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "UploadPackage":
        magic, version, mode_ix, bits, dtick, window, count = _PKG_HEADER.unpack_from(data, 0)
        if magic != PACKAGE_MAGIC or version != PACKAGE_VERSION:
            raise ValueError("not an upload package")
        mode = PACKAGE_MODES[mode_ix]
        width = token_nbytes(bits)
        pos = _PKG_HEADER.size
        n_values = count * (2 if mode == "preimages" else 1)
        values = [data[pos + j * width: pos + (j + 1) * width] for j in range(n_values)]
        pos += n_values * width
        report = None
        if mode == "bloom-report":
            filters, _ = deserialize_filters(data[pos:])
            report = filters[0]
        elif pos != len(data):
            raise ValueError("trailing bytes in upload package")
        return cls(mode, values[:count], dtick, window, bits, values[count:], report)


def _newest(items: list[tuple[int, bytes]], limit: int) -> list[tuple[int, bytes]]:
    items.sort()
    return items[-limit:] if len(items) > limit else items


def collect_upload(device: DeviceState, diagnosis_tick: int, params: ProtocolParams,
                   window: tuple[int, int] | None = None) -> UploadPackage:
    """Gather what a diagnosed device hands its doctor.

    ``window`` defaults to the contagious window ending at the diagnosis.
    At most g entries leave the device; the oldest are dropped first.
    """
    lo, hi = window if window is not None else (diagnosis_tick - params.contagious_window_i, diagnosis_tick)
    g = params.growth_bound_g
    modes = params.mode_flags
    bits = params.token_len_bits

    if modes.encounter == "per-encounter":
        latest: dict[bytes, int] = {}
        for value, tick in device.heard_log:
            if lo <= tick <= hi and latest.get(value, -1) < tick:
                latest[value] = tick
        chosen = [v for _, v in _newest([(t, v) for v, t in latest.items()], g)]
        random.Random(derive_seed("shuffle", device.rng_seed, diagnosis_tick)).shuffle(chosen)
        if not chosen:
            raise EmptyUploadError(f"no stored encounters in [{lo}, {hi}]")
        return UploadPackage("per-encounter-hashes", chosen, diagnosis_tick, hi - lo, bits)

    if modes.freshness_check:
        seen: dict[bytes, int] = {}
        for rec in device.emitted_log:
            if lo <= rec.epoch_tick <= hi:
                seen.setdefault(rec.token, rec.epoch_tick)
        chosen = [v for _, v in _newest([(t, v) for v, t in seen.items()], g)]
        if not chosen:
            raise EmptyUploadError(f"no broadcasts in [{lo}, {hi}]")
        return UploadPackage("raw-tokens", chosen, diagnosis_tick, hi - lo, bits)

    records = []
    for index, rec in enumerate(device.own_log):
        first, last = broadcast_interval(device, index)
        if first <= hi and last >= lo:
            records.append(rec)
    records = records[-g:]
    if not records:
        raise EmptyUploadError(f"no own tokens on air in [{lo}, {hi}]")
    if modes.validity_check:
        return UploadPackage("preimages", [r.preimage for r in records], diagnosis_tick, hi - lo, bits,
                             claims=[r.token for r in records])
    return UploadPackage("raw-tokens", [r.token for r in records], diagnosis_tick, hi - lo, bits)


def verify_validity(package: UploadPackage, params: ProtocolParams) -> tuple[list[bytes], list[bytes]]:
    """Split a preimage upload into accepted token hashes and rejected entries.

    An entry is accepted iff hashing its preimage reproduces the token the
    patient claims to have broadcast.  Accepted values are the hashes; the
    preimages themselves go no further.
    """
    if not params.mode_flags.validity_check:
        raise ModeMismatch("validity checking is off")
    if package.mode != "preimages":
        raise ModeMismatch(f"expected a preimages package, got {package.mode}")
    if len(package.claims) != len(package.entries):
        raise ValueError("claims and preimages differ in length")
    accepted, rejected = [], []
    for preimage, claim in zip(package.entries, package.claims):
        token = sha256_trunc(preimage, params.token_len_bits)
        if token == claim:
            accepted.append(token)
        else:
            rejected.append(preimage)
    return accepted, rejected


def build_bloom_report(entries: list[bytes], registry_shape: tuple[int, int, int]) -> BloomFilter:
    m_bits, k, seed = registry_shape
    report = BloomFilter(m_bits, k, seed)
    unique = sorted(set(entries))
    report.insert_many(unique)
    return report


def prepare_report(package: UploadPackage, params: ProtocolParams,
                   registry_shape: tuple[int, int, int] | None = None) -> tuple[UploadPackage, int]:
    """Full doctor-side handling: validity check, then Bloom packaging if configured.

    Returns the package to forward and the number of rejected entries.
    """
    rejected = 0
    entries = package.entries
    mode = package.mode
    if mode == "preimages":
        entries, bad = verify_validity(package, params)
        rejected = len(bad)
        mode = "raw-tokens"
    if params.mode_flags.upload == "bloom":
        if registry_shape is None:
            raise ValueError("bloom upload needs the registry's active shape")
        report = build_bloom_report(entries, registry_shape)
        return UploadPackage("bloom-report", [], package.diagnosis_tick, package.window_ticks,
                             package.token_len_bits, report=report), rejected
    return UploadPackage(mode, list(entries), package.diagnosis_tick, package.window_ticks,
                         package.token_len_bits), rejected
