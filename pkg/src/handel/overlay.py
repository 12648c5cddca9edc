"""ID shuffling and the binary-tree peer-set partition.

Node ``i``'s level-``l`` peer set is the sibling half of the height-``l``
subtree containing ``i``. For a participant count that is not a power of two
the tree is built over ``2**ceil(log2 n)`` virtual slots and absent ids are
dropped, so every peer set is a contiguous ``range`` that may be short or
empty.
"""

from __future__ import annotations

from dataclasses import dataclass

from handel.prng import shuffled


class OverlayError(ValueError):
    pass


def num_levels(n: int) -> int:
    """``ceil(log2 n)``; 0 for a single participant."""
    if n < 1:
        raise OverlayError("n must be >= 1")
    return (n - 1).bit_length()


@dataclass(frozen=True)
class PeerSet:
    level: int
    members: range

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, j: int) -> bool:
        return j in self.members

    def __iter__(self):
        return iter(self.members)


def peer_range(i: int, level: int, n: int) -> range:
    if level == 0:
        return range(i, i + 1)
    half = 1 << (level - 1)
    lo = ((i >> (level - 1)) ^ 1) << (level - 1)
    return range(min(lo, n), min(lo + half, n))


def own_range(i: int, level: int, n: int) -> range:
    """Ids in the height-``level`` subtree containing ``i`` (levels ``0..level``)."""
    size = 1 << level
    lo = (i >> level) << level
    return range(lo, min(lo + size, n))


def peer_set(i: int, level: int, n: int) -> PeerSet:
    if not 0 <= i < n:
        raise OverlayError(f"id {i} out of range [0, {n})")
    if not 0 <= level <= num_levels(n):
        raise OverlayError(f"level {level} out of range [0, {num_levels(n)}]")
    return PeerSet(level, peer_range(i, level, n))


def level_of(i: int, j: int) -> int:
    """The level at which ``j`` appears in ``i``'s partition (0 iff ``i == j``)."""
    return (i ^ j).bit_length()


def shuffle_ids(n: int, seed: bytes) -> list[int]:
    """Permutation mapping original index -> shuffled id."""
    if n < 1:
        raise OverlayError("n must be >= 1")
    return shuffled(range(n), seed, "ids")


@dataclass(frozen=True)
class Roster:
    n: int
    seed: bytes
    id_of: tuple[int, ...]

    @classmethod
    def build(cls, n: int, seed: bytes) -> "Roster":
        return cls(n, seed, tuple(shuffle_ids(n, seed)))

    @property
    def levels(self) -> int:
        return num_levels(self.n)
