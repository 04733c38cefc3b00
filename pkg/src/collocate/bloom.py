"""Bloom filters and the geometrically growing filter chain.

Probe positions use double hashing over one SHA-256 call per token:
``h1, h2`` are the first two little-endian 64-bit words of
``SHA-256(seed_le64 || token)`` with ``h2`` forced odd, and probe ``i`` lands
on ``(h1 + i*h2) mod m``.  Bits are packed LSB-first: bit ``i`` lives in byte
``i // 8`` at position ``i % 8``.
"""

from __future__ import annotations

import hashlib
import math
import struct
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .crypto import derive_seed
from .params import MAX_FILTER_BITS, derive_k, filter_capacity

MAGIC = b"ACDB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHH")
_FILTER = struct.Struct("<QHQQQQ")


class IncompatibleFilters(ValueError):
    pass


class SerializationError(ValueError):
    pass


def probe_hashes(seed: int, tokens: Sequence[bytes]) -> tuple[np.ndarray, np.ndarray]:
    prefix = seed.to_bytes(8, "little")
    sha = hashlib.sha256
    buf = b"".join([sha(prefix + t).digest()[:16] for t in tokens])
    words = np.frombuffer(buf, dtype="<u8").reshape(-1, 2).astype(np.uint64)
    return words[:, 0].copy(), words[:, 1] | np.uint64(1)


def probe_indices(seed: int, token: bytes, k: int, m: int) -> list[int]:
    """Reference (pure Python, exact integer) probe positions for one token."""
    digest = hashlib.sha256(seed.to_bytes(8, "little") + token).digest()
    h1 = int.from_bytes(digest[0:8], "little")
    h2 = int.from_bytes(digest[8:16], "little") | 1
    return [(h1 + i * h2) % m for i in range(k)]


class BloomFilter:
    __slots__ = ("m_bits", "k", "seed", "bits", "n_inserted")

    def __init__(self, m_bits: int, k: int, seed: int, bits: np.ndarray | None = None, n_inserted: int = 0):
        if m_bits < 1 or k < 1:
            raise ValueError(f"filter needs m_bits >= 1 and k >= 1, got m={m_bits}, k={k}")
        if m_bits >= MAX_FILTER_BITS:
            raise ValueError("m_bits must be below 2**63")
        self.m_bits = int(m_bits)
        self.k = int(k)
        self.seed = int(seed)
        nbytes = (self.m_bits + 7) // 8
        if bits is None:
            bits = np.zeros(nbytes, dtype=np.uint8)
        elif bits.dtype != np.uint8 or bits.shape != (nbytes,):
            raise ValueError("bit array does not match m_bits")
        self.bits = bits
        self.n_inserted = int(n_inserted)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.m_bits, self.k, self.seed)

    @property
    def capacity(self) -> int:
        return filter_capacity(self.m_bits, self.k)

    def insert(self, token: bytes) -> "BloomFilter":
        return self.insert_many([token])

    def insert_many(self, tokens: Sequence[bytes]) -> "BloomFilter":
        if tokens:
            h1, h2 = probe_hashes(self.seed, tokens)
            _kernels.bloom_set(self.bits, h1, h2, self.k, self.m_bits)
            self.n_inserted += len(tokens)
        return self

    def contains(self, token: bytes) -> bool:
        return bool(self.contains_many([token])[0])

    def __contains__(self, token: bytes) -> bool:
        return self.contains(token)

    def contains_many(self, tokens: Sequence[bytes]) -> np.ndarray:
        if not tokens:
            return np.zeros(0, dtype=np.bool_)
        h1, h2 = probe_hashes(self.seed, tokens)
        return _kernels.bloom_test(self.bits, h1, h2, self.k, self.m_bits)

    def popcount(self) -> int:
        return _kernels.popcount(self.bits)

    def fill_ratio(self) -> float:
        return self.popcount() / self.m_bits

    def copy(self) -> "BloomFilter":
        return BloomFilter(self.m_bits, self.k, self.seed, self.bits.copy(), self.n_inserted)

    def payload(self) -> bytes:
        return self.bits.tobytes()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BloomFilter):
            return NotImplemented
        return (self.shape == other.shape and self.n_inserted == other.n_inserted
                and np.array_equal(self.bits, other.bits))

    def __repr__(self) -> str:
        return f"BloomFilter(m_bits={self.m_bits}, k={self.k}, seed={self.seed:#x}, n_inserted={self.n_inserted})"


def new_filter(m_bits: int, k: int, seed: int) -> BloomFilter:
    return BloomFilter(m_bits, k, seed)


def check_compatible(a: BloomFilter, b: BloomFilter) -> None:
    for name in ("m_bits", "k", "seed"):
        if getattr(a, name) != getattr(b, name):
            raise IncompatibleFilters(f"{name} differs: {getattr(a, name)} != {getattr(b, name)}")


def union(a: BloomFilter, b: BloomFilter) -> BloomFilter:
    check_compatible(a, b)
    return BloomFilter(a.m_bits, a.k, a.seed, a.bits | b.bits, a.n_inserted + b.n_inserted)


def saturate(f: BloomFilter) -> BloomFilter:
    """All-ones copy of ``f`` (pad bits past ``m_bits`` stay zero)."""
    bits = np.full_like(f.bits, 0xFF)
    tail = f.m_bits % 8
    if tail:
        bits[-1] = (1 << tail) - 1
    return BloomFilter(f.m_bits, f.k, f.seed, bits, f.n_inserted)


class FilterChain:
    """Filters of sizes s, ceil(alpha*s), ceil(alpha**2*s), ... queried by OR.

    Only the last filter takes insertions.  As soon as it reaches its
    capacity ``floor(m ln2 / k)`` the next, larger filter is appended, so the
    shape that reports must target is always known in advance.
    """

    def __init__(self, p_fp: float | None, s: int | None, alpha: float | None, seed: int = 0,
                 k: int | None = None):
        self.p_fp = p_fp
        self.s = s
        self.alpha = alpha
        self.k = k if k is not None else (derive_k(p_fp) if p_fp is not None else None)
        self.seed = seed
        self.filters: list[BloomFilter] = []
        self.epochs: list[list[int]] = []
        self.generations: list[int] = []
        self._minted = 0

    # -- growth ------------------------------------------------------------

    def _size(self, generation: int) -> int:
        return math.ceil(self.s * self.alpha ** generation)

    def _append(self, generation: int, tick: int) -> BloomFilter:
        if self.s is None or self.alpha is None or self.k is None:
            raise ValueError("chain was loaded without growth parameters")
        f = BloomFilter(self._size(generation), self.k, derive_seed("filter", self.seed, self._minted))
        self._minted += 1
        self.filters.append(f)
        self.epochs.append([tick, tick])
        self.generations.append(generation)
        return f

    def active(self, tick: int = 0) -> BloomFilter:
        """The filter currently accepting insertions (created on first use)."""
        if not self.filters:
            self._append(0, tick)
        return self.filters[-1]

    def _touch(self, tick: int) -> None:
        span = self.epochs[-1]
        span[0] = min(span[0], tick)
        span[1] = max(span[1], tick)

    def _grow_if_full(self, tick: int) -> None:
        last = self.filters[-1]
        if last.n_inserted >= last.capacity:
            self._append(self.generations[-1] + 1, tick)

    def insert(self, token: bytes, now_tick: int = 0) -> "FilterChain":
        f = self.active(now_tick)
        f.insert(token)
        self._touch(now_tick)
        self._grow_if_full(now_tick)
        return self

    def merge(self, report: BloomFilter, now_tick: int = 0) -> "FilterChain":
        """OR a report shaped like the active filter into it."""
        f = self.active(now_tick)
        check_compatible(f, report)
        np.bitwise_or(f.bits, report.bits, out=f.bits)
        f.n_inserted += report.n_inserted
        self._touch(now_tick)
        self._grow_if_full(now_tick)
        return self

    # -- queries -----------------------------------------------------------

    def contains(self, token: bytes) -> bool:
        return any(f.contains(token) for f in self.filters)

    def __contains__(self, token: bytes) -> bool:
        return self.contains(token)

    def contains_many(self, tokens: Sequence[bytes]) -> np.ndarray:
        out = np.zeros(len(tokens), dtype=np.bool_)
        if not tokens:
            return out
        for f in self.filters:
            if f.n_inserted == 0 and not f.bits.any():
                continue
            out |= f.contains_many(tokens)
        return out

    def __len__(self) -> int:
        return len(self.filters)

    def sizes(self) -> list[int]:
        return [f.m_bits for f in self.filters]

    def total_bits(self) -> int:
        return sum(f.m_bits for f in self.filters)

    # -- expiry ------------------------------------------------------------

    def expire(self, cutoff: int) -> int:
        """Drop whole filters whose last insertion tick is before ``cutoff``.

        Returns the number dropped.  If everything goes, the next insertion
        restarts the chain at size s.
        """
        keep = [i for i, (_, last) in enumerate(self.epochs) if last >= cutoff]
        dropped = len(self.filters) - len(keep)
        if dropped:
            self.filters = [self.filters[i] for i in keep]
            self.epochs = [self.epochs[i] for i in keep]
            self.generations = [self.generations[i] for i in keep]
        return dropped

    # -- copying and serialization ----------------------------------------

    def copy(self) -> "FilterChain":
        other = FilterChain(self.p_fp, self.s, self.alpha, self.seed, self.k)
        other.filters = [f.copy() for f in self.filters]
        other.epochs = [list(e) for e in self.epochs]
        other.generations = list(self.generations)
        other._minted = self._minted
        return other

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FilterChain):
            return NotImplemented
        return self.filters == other.filters and self.epochs == other.epochs

    def to_bytes(self) -> bytes:
        return serialize_filters(self.filters, [tuple(e) for e in self.epochs])

    @classmethod
    def from_bytes(cls, data: bytes, p_fp: float | None = None, s: int | None = None,
                   alpha: float | None = None, seed: int = 0) -> "FilterChain":
        filters, epochs = deserialize_filters(data)
        k = filters[-1].k if filters else None
        chain = cls(p_fp, s, alpha, seed, k if p_fp is None else None)
        chain.filters = filters
        chain.epochs = [list(e) for e in epochs]
        chain.generations = _infer_generations(filters, s, alpha)
        chain._minted = len(filters)
        return chain


def _infer_generations(filters: list[BloomFilter], s: int | None, alpha: float | None) -> list[int]:
    if not filters or s is None or alpha is None:
        return list(range(len(filters)))
    gens = []
    for f in filters:
        g = 0
        while math.ceil(s * alpha ** g) < f.m_bits:
            g += 1
        gens.append(g)
    return gens


def serialize_filters(filters: Iterable[BloomFilter], epochs: Iterable[tuple[int, int]]) -> bytes:
    filters = list(filters)
    epochs = list(epochs)
    if len(filters) > 0xFFFF:
        raise SerializationError("too many filters for a u16 count")
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(filters))]
    for f, (first, last) in zip(filters, epochs):
        parts.append(_FILTER.pack(f.m_bits, f.k, f.seed, first, last, f.n_inserted))
        parts.append(f.payload())
    return b"".join(parts)


def deserialize_filters(data: bytes) -> tuple[list[BloomFilter], list[tuple[int, int]]]:
    if len(data) < _HEADER.size:
        raise SerializationError("truncated header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise SerializationError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise SerializationError(f"unsupported format version {version}")
    pos = _HEADER.size
    filters, epochs = [], []
    for _ in range(count):
        if pos + _FILTER.size > len(data):
            raise SerializationError("truncated filter header")
        m, k, seed, first, last, n = _FILTER.unpack_from(data, pos)
        pos += _FILTER.size
        nbytes = (m + 7) // 8
        if pos + nbytes > len(data):
            raise SerializationError("truncated bit array")
        bits = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=pos).copy()
        pos += nbytes
        tail = m % 8
        if tail and bits[-1] >> tail:
            raise SerializationError("non-zero pad bits")
        filters.append(BloomFilter(m, k, seed, bits, n))
        epochs.append((first, last))
    if pos != len(data):
        raise SerializationError(f"{len(data) - pos} trailing bytes")
    return filters, epochs
