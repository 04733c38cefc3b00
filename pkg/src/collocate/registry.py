"""Central registry of infected values: exact set or Bloom chain, snapshots, expiry, queries.

The registry keeps only opaque values (or filter bits) plus the tick bookkeeping
needed for expiry.  Matching happens on the device against a snapshot; the
trusted-query mode is the one place where heard values reach the server.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .bloom import FilterChain, deserialize_filters
from .crypto import derive_seed
from .medical import UploadPackage
from .params import ProtocolParams, plausibility_limit

EXACT_MAGIC = b"ACDR"
EXACT_VERSION = 1
_EXACT_HEADER = struct.Struct("<4sHBQQ")
ENCOUNTER_CODES = {"raw": 0, "per-encounter": 1}


class RegistryRejection(ValueError):
    """A report the registry refused; the simulator counts these."""


class ShapeMismatch(RegistryRejection):
    pass


class ImplausibleReport(RegistryRejection):
    def __init__(self, fill: float, limit: float):
        self.fill = fill
        self.limit = limit
        super().__init__(f"report fill ratio {fill:.4f} exceeds plausibility limit {limit:.4f}")


class OversizedReport(RegistryRejection):
    pass


class QueryModeOff(RuntimeError):
    pass


@dataclass(frozen=True)
class RegistrySnapshot:
    snapshot_tick: int
    kind: str
    encounter_mode: str = "raw"
    entries: tuple[bytes, ...] = ()
    chain: FilterChain | None = None
    _lookup: frozenset = field(default=frozenset(), compare=False, repr=False)

    @property
    def active_shape(self) -> tuple[int, int, int] | None:
        if self.chain is None or not self.chain.filters:
            return None
        return self.chain.filters[-1].shape

    def contains_many(self, values: Sequence[bytes]) -> np.ndarray:
        if self.kind == "exact":
            lookup = self._lookup
            return np.fromiter((v in lookup for v in values), dtype=np.bool_, count=len(values))
        return self.chain.contains_many(values)

    def to_bytes(self) -> bytes:
        if self.kind == "bloom":
            return self.chain.to_bytes()
        head = _EXACT_HEADER.pack(EXACT_MAGIC, EXACT_VERSION, ENCOUNTER_CODES[self.encounter_mode],
                                  self.snapshot_tick, len(self.entries))
        return head + b"".join(self.entries)

    @classmethod
    def from_bytes(cls, data: bytes) -> "RegistrySnapshot":
        magic = data[:4]
        if magic == EXACT_MAGIC:
            _, version, mode, tick, count = _EXACT_HEADER.unpack_from(data, 0)
            if version != EXACT_VERSION:
                raise ValueError(f"unsupported snapshot version {version}")
            body = data[_EXACT_HEADER.size:]
            if count == 0:
                if body:
                    raise ValueError("trailing bytes after empty entry list")
                entries: tuple[bytes, ...] = ()
            else:
                width, extra = divmod(len(body), count)
                if extra:
                    raise ValueError("entry list length is not a multiple of the entry count")
                entries = tuple(body[j * width:(j + 1) * width] for j in range(count))
            encounter = {v: k for k, v in ENCOUNTER_CODES.items()}[mode]
            return exact_snapshot(tick, entries, encounter)
        if magic == b"ACDB":
            filters, epochs = deserialize_filters(data)
            chain = FilterChain(None, None, None, k=filters[-1].k if filters else None)
            chain.filters = filters
            chain.epochs = [list(e) for e in epochs]
            chain.generations = list(range(len(filters)))
            tick = max((last for _, last in epochs), default=0)
            return cls(tick, "bloom", chain=chain)
        raise ValueError(f"unknown snapshot magic {magic!r}")


def exact_snapshot(tick: int, entries: Iterable[bytes], encounter_mode: str = "raw") -> RegistrySnapshot:
    ordered = tuple(sorted(entries))
    return RegistrySnapshot(tick, "exact", encounter_mode, ordered, None, frozenset(ordered))


@dataclass(frozen=True)
class TrustedQueryResult:
    verdicts: list[bool]
    request_bits: int

    @property
    def request_bytes(self) -> float:
        return self.request_bits / 8


class Registry:
    """In-process registry service driven by the simulator clock."""

    def __init__(self, params: ProtocolParams, seed: int = 0):
        self.params = params
        self.backend = params.registry_backend
        self.exact: dict[bytes, int] = {}
        self.chain: FilterChain | None = None
        if self.backend == "bloom":
            self.chain = FilterChain(params.p_fp, params.initial_filter_bits_s, params.growth_factor_alpha,
                                     seed=derive_seed("registry-chain", seed))
            self.chain.active(0)
        self.last_snapshot_tick: int | None = None
        self.total_reports = 0
        self.rejected_reports = 0
        self.bytes_published = 0

    @property
    def active_shape(self) -> tuple[int, int, int] | None:
        if self.chain is None:
            return None
        return self.chain.active().shape

    def ingest(self, package: UploadPackage, now_tick: int) -> "Registry":
        self.total_reports += 1
        try:
            self._ingest(package, now_tick)
        except RegistryRejection:
            self.rejected_reports += 1
            raise
        return self

    def _ingest(self, package: UploadPackage, now_tick: int) -> None:
        if self.backend == "exact":
            if package.mode not in ("raw-tokens", "per-encounter-hashes"):
                raise ShapeMismatch(f"exact registry cannot take a {package.mode} package")
            unique = set(package.entries)
            if len(unique) > self.params.growth_bound_g:
                raise OversizedReport(f"{len(unique)} entries exceed growth bound {self.params.growth_bound_g}")
            for value in unique:
                self.exact[value] = now_tick
            return
        report = package.report
        if package.mode != "bloom-report" or report is None:
            raise ShapeMismatch(f"bloom registry cannot take a {package.mode} package")
        active = self.chain.active(now_tick)
        if report.shape != active.shape:
            raise ShapeMismatch(f"report shape {report.shape} does not match active filter {active.shape}")
        fill = report.fill_ratio()
        limit = plausibility_limit(self.params, report.m_bits)
        if fill > limit:
            raise ImplausibleReport(fill, limit)
        self.chain.merge(report, now_tick)

    def expire(self, now_tick: int) -> "Registry":
        cutoff = now_tick - self.params.retention_ticks
        if self.backend == "exact":
            stale = [v for v, t in self.exact.items() if t < cutoff]
            for v in stale:
                del self.exact[v]
        else:
            self.chain.expire(cutoff)
            self.chain.active(now_tick)
        return self

    def snapshot(self, now_tick: int) -> RegistrySnapshot:
        if self.backend == "exact":
            snap = exact_snapshot(now_tick, self.exact, self.params.mode_flags.encounter)
        else:
            snap = RegistrySnapshot(now_tick, "bloom", self.params.mode_flags.encounter, chain=self.chain.copy())
        self.bytes_published += len(snap.to_bytes())
        self.last_snapshot_tick = now_tick
        return snap

    def contains_many(self, values: Sequence[bytes]) -> np.ndarray:
        if self.backend == "exact":
            return np.fromiter((v in self.exact for v in values), dtype=np.bool_, count=len(values))
        return self.chain.contains_many(values)

    def query_trusted(self, heard_tokens: Sequence[bytes]) -> TrustedQueryResult:
        if self.params.mode_flags.query != "trusted-query":
            raise QueryModeOff("trusted queries are disabled")
        heard_tokens = list(heard_tokens)
        verdicts = self.contains_many(heard_tokens).tolist()
        return TrustedQueryResult(verdicts, len(heard_tokens) * self.params.token_len_bits)


def match_local(snapshot: RegistrySnapshot, heard_log: Iterable) -> list[bytes]:
    """Distinct heard values that the snapshot reports as infected, in first-heard order."""
    seen: dict[bytes, None] = {}
    for item in heard_log:
        value = item if isinstance(item, bytes) else item[0]
        seen.setdefault(value, None)
    values = list(seen)
    if not values:
        return []
    hits = snapshot.contains_many(values)
    return [v for v, hit in zip(values, hits) if hit]
