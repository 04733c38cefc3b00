"""Hash primitives shared by tokens, encounters and the registry.

Tokens are ``bytes`` of ``ceil(bits / 8)`` octets holding a big-endian
unsigned integer below ``2**bits``; for byte-aligned widths that is just the
leading bytes of a digest.  Byte-string comparison of equal-width tokens is
then the unsigned big-endian order used for lexicographic pairing.
"""

from __future__ import annotations

import hashlib

MAX_TOKEN_BITS = 256


def token_nbytes(bits: int) -> int:
    return (bits + 7) // 8


def truncate(digest: bytes, bits: int) -> bytes:
    """Keep the leading ``bits`` bits of ``digest`` as a token."""
    if bits > len(digest) * 8:
        raise ValueError(f"cannot take {bits} bits from a {len(digest) * 8}-bit digest")
    nbytes = token_nbytes(bits)
    value = int.from_bytes(digest, "big") >> (len(digest) * 8 - bits)
    return value.to_bytes(nbytes, "big")


def sha256_trunc(data: bytes, bits: int) -> bytes:
    return truncate(hashlib.sha256(data).digest(), bits)


def keyed_stream(label: bytes, seed: int, tick: int, bits: int) -> bytes:
    """Deterministic pseudo-random ``bits``-bit value for (label, seed, tick)."""
    h = hashlib.shake_256(label + seed.to_bytes(8, "big") + tick.to_bytes(8, "big", signed=True))
    return truncate(h.digest(32), bits)


def derive_seed(*parts: object) -> int:
    """Derive a 64-bit seed from a tuple of ints/strings/bytes."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            chunk = part
        elif isinstance(part, int):
            chunk = part.to_bytes(16, "big", signed=True)
        else:
            chunk = str(part).encode()
        h.update(len(chunk).to_bytes(4, "big"))
        h.update(chunk)
    return int.from_bytes(h.digest()[:8], "big")
