"""Contributions, their algebra, and a deterministic BLS-shaped reference scheme.

A contribution is a participation bitset plus a fixed 64-byte payload. Bitsets
are held as Python ints (bit ``i`` set iff participant ``i`` is included),
which keeps union, disjointness and popcount cheap.

The reference scheme stands in for BLS multi-signatures: participant ``i``'s
"signature" is a 64-byte token drawn from a keyed SHAKE-256 stream over
``(seed, message, "token", i)``, and aggregation XORs payloads. This keeps the
partial, commutative, associative algebra of the real scheme while making
validity cheap and exact to check.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable

from handel.prng import keyed_stream

PAYLOAD_SIZE = 64


class SchemeError(ValueError):
    """Raised on malformed contributions or out-of-range participants."""


class NotAggregable(SchemeError):
    """Raised when aggregating contributions whose bitsets overlap."""


@dataclass(frozen=True)
class Contribution:
    bits: int
    n: int
    payload: bytes = field(repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise SchemeError("bitset length must be >= 1")
        if self.bits <= 0:
            raise SchemeError("a contribution needs at least one bit set")
        if self.bits >> self.n:
            raise SchemeError(f"bitset has bits beyond participant count {self.n}")
        if len(self.payload) != PAYLOAD_SIZE:
            raise SchemeError(f"payload must be {PAYLOAD_SIZE} bytes, got {len(self.payload)}")

    @property
    def weight(self) -> int:
        return self.bits.bit_count()

    @property
    def is_individual(self) -> bool:
        return self.bits & (self.bits - 1) == 0

    def members(self) -> list[int]:
        out = []
        bits = self.bits
        while bits:
            low = bits & -bits
            out.append(low.bit_length() - 1)
            bits ^= low
        return out

    def with_payload(self, payload: bytes) -> "Contribution":
        return Contribution(self.bits, self.n, payload)


def bits_of(ids: Iterable[int]) -> int:
    mask = 0
    for i in ids:
        mask |= 1 << i
    return mask


def weight(c: Contribution) -> int:
    return c.weight


def aggregable(c1: Contribution, c2: Contribution) -> bool:
    if c1.n != c2.n:
        raise SchemeError(f"bitset length mismatch: {c1.n} vs {c2.n}")
    return c1.bits & c2.bits == 0


def xor_bytes(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "little") ^ int.from_bytes(b, "little")).to_bytes(PAYLOAD_SIZE, "little")


@dataclass(frozen=True)
class PublicParams:
    n_participants: int
    seed: bytes
    message: bytes = b"handel"

    def __post_init__(self):
        if self.n_participants < 1:
            raise SchemeError("n_participants must be >= 1")
        if len(self.seed) != 32:
            raise SchemeError("seed must be 32 bytes")


class Scheme(ABC):
    """Pluggable aggregation scheme.

    Subclasses supply the payload algebra (``combine``), individual
    contributions and ``verify``; bitset bookkeeping is shared.
    """

    params: PublicParams

    @abstractmethod
    def individual(self, i: int) -> Contribution: ...

    @abstractmethod
    def combine(self, p1: bytes, p2: bytes) -> bytes: ...

    @abstractmethod
    def verify(self, c: Contribution) -> bool: ...

    weight = staticmethod(weight)
    aggregable = staticmethod(aggregable)

    def aggregate(self, c1: Contribution, c2: Contribution) -> Contribution:
        if not aggregable(c1, c2):
            raise NotAggregable("contributions share participants")
        return Contribution(c1.bits | c2.bits, c1.n, self.combine(c1.payload, c2.payload))

    def aggregate_all(self, contributions: Iterable[Contribution]) -> Contribution:
        it = iter(contributions)
        acc = next(it)
        for c in it:
            acc = self.aggregate(acc, c)
        return acc


def token(params: PublicParams, i: int) -> bytes:
    """The reference scheme's individual payload for participant ``i``."""
    if not 0 <= i < params.n_participants:
        raise SchemeError(f"participant {i} out of range [0, {params.n_participants})")
    return keyed_stream(params.seed, params.message, "token", i, nbytes=PAYLOAD_SIZE)


class ReferenceScheme(Scheme):
    """Keyed-token XOR scheme.

    ``verify`` recomputes the XOR of the tokens of all set bits. XORs over
    aligned power-of-two blocks are precomputed so that bitsets made of a
    few complete blocks (the common shape in Handel) verify in
    ``O(log n)`` big-int operations.
    """

    def __init__(self, params: PublicParams):
        self.params = params
        n = params.n_participants
        self.n = n
        tokens = [int.from_bytes(token(params, i), "little") for i in range(n)]
        # blocks[h][j] = XOR of tokens in [j*2^h, (j+1)*2^h) restricted to [0, n)
        blocks = [tokens]
        while len(blocks[-1]) > 1:
            prev = blocks[-1]
            nxt = [prev[k] ^ (prev[k + 1] if k + 1 < len(prev) else 0) for k in range(0, len(prev), 2)]
            blocks.append(nxt)
        self._blocks = blocks
        self._tokens = tokens

    def individual(self, i: int) -> Contribution:
        return Contribution(1 << i, self.n, token(self.params, i))

    def combine(self, p1: bytes, p2: bytes) -> bytes:
        return xor_bytes(p1, p2)

    def _block_mask(self, h: int, j: int) -> int:
        lo = j << h
        size = min(1 << h, self.n - lo)
        return (1 << size) - 1

    def _xor(self, seg: int, h: int, j: int) -> int:
        if seg == 0:
            return 0
        if seg == self._block_mask(h, j):
            return self._blocks[h][j]
        half = 1 << (h - 1)
        left = seg & ((1 << half) - 1)
        return self._xor(left, h - 1, 2 * j) ^ self._xor(seg >> half, h - 1, 2 * j + 1)

    def expected_payload(self, bits: int) -> bytes:
        top = len(self._blocks) - 1
        return self._xor(bits, top, 0).to_bytes(PAYLOAD_SIZE, "little")

    def verify(self, c: Contribution) -> bool:
        if c.n != self.n:
            return False
        return c.payload == self.expected_payload(c.bits)


def encode_contribution(c: Contribution) -> bytes:
    """2-byte LE bit-length, bitset packed LSB-first per byte, 64-byte payload."""
    if c.n > 0xFFFF:
        raise SchemeError("bitset too long for a 2-byte length prefix")
    return c.n.to_bytes(2, "little") + c.bits.to_bytes((c.n + 7) // 8, "little") + c.payload


def decode_contribution(data: bytes) -> tuple[Contribution, int]:
    """Decode one contribution from the front of ``data``; return it and bytes consumed."""
    if len(data) < 2:
        raise SchemeError("truncated contribution header")
    n = int.from_bytes(data[:2], "little")
    nb = (n + 7) // 8
    end = 2 + nb + PAYLOAD_SIZE
    if len(data) < end:
        raise SchemeError("truncated contribution body")
    bits = int.from_bytes(data[2:2 + nb], "little")
    return Contribution(bits, n, bytes(data[2 + nb:end])), end
