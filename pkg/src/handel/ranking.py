"""Verification priorities, contact order, scoring and the verification window.

A node's verification priority (VP) over a level's peers is a keyed shuffle
of that peer set; rank 0 is the most trusted sender. The contact order (CPV)
of a level lists peers by how highly *they* rank the owner, so that every
node first pushes its aggregate to the peers most likely to look at it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from handel.overlay import own_range, peer_range
from handel.prng import shuffled
from handel.scheme import Contribution

WINDOW_MIN = 1
WINDOW_MAX = 128
INITIAL_WINDOW = 16
EXPANSION = 2
CONTRACTION = 4


class RankingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VpOrder:
    owner: int
    level: int
    peers: range
    ranks: np.ndarray  # ranks[j - peers.start] = rank of peer j

    def rank_of(self, peer: int) -> int:
        if peer not in self.peers:
            raise KeyError(peer)
        return int(self.ranks[peer - self.peers.start])

    @property
    def order(self) -> list[int]:
        """Peers from highest to lowest priority."""
        return (np.argsort(self.ranks, kind="stable") + self.peers.start).tolist()

    def __eq__(self, other):
        return (
            isinstance(other, VpOrder)
            and (self.owner, self.level, self.peers) == (other.owner, other.level, other.peers)
            and np.array_equal(self.ranks, other.ranks)
        )


@dataclass(frozen=True)
class CpvOrder:
    owner: int
    level: int
    contact_order: tuple[int, ...]


def _as_range(peers: Sequence[int]) -> range:
    if isinstance(peers, range) and peers.step == 1:
        return peers
    peers = sorted(peers)
    if not peers or peers != list(range(peers[0], peers[-1] + 1)):
        raise RankingError("peer sets must be contiguous id ranges")
    return range(peers[0], peers[-1] + 1)


def _vp_ranks(seed: bytes, owner: int, level: int, peers: range) -> np.ndarray:
    order = shuffled(peers, seed, "vp", owner, level)
    ranks = np.empty(len(peers), dtype=np.int32)
    ranks[np.asarray(order, dtype=np.int64) - peers.start] = np.arange(len(peers), dtype=np.int32)
    return ranks


def vp_order(seed: bytes, owner: int, level: int, peers: Sequence[int]) -> VpOrder:
    """Fisher-Yates over the peers keyed by ``(seed, "vp", owner, level)``; lower rank wins."""
    if len(peers) == 0:
        raise RankingError("empty peer set")
    peers = _as_range(peers)
    return VpOrder(owner, level, peers, _vp_ranks(seed, owner, level, peers))


class RankCache:
    """Per-level VP rank matrices shared by every node of a network.

    For a level and a block ``B`` of owners, ``matrix[o, p]`` is owner ``o``'s
    rank of peer ``p`` (``p`` in the sibling block). A node's VP is a row of
    its block's matrix; its CPV is a column of the sibling block's matrix.
    Memory is ``O(n**2)`` int32 entries in total.
    """

    def __init__(self, seed: bytes, n: int):
        self.seed = seed
        self.n = n
        self._blocks: dict[tuple[int, int], np.ndarray] = {}

    def _matrix(self, level: int, block_start: int) -> np.ndarray:
        key = (level, block_start)
        m = self._blocks.get(key)
        if m is None:
            owners = own_range(block_start, level - 1, self.n)
            peers = peer_range(block_start, level, self.n)
            m = np.empty((len(owners), len(peers)), dtype=np.int32)
            for row, o in enumerate(owners):
                m[row] = _vp_ranks(self.seed, o, level, peers)
            self._blocks[key] = m
        return m

    def vp(self, owner: int, level: int, peers: Sequence[int] = None) -> VpOrder:
        own = own_range(owner, level - 1, self.n)
        expected = peer_range(owner, level, self.n)
        if peers is not None and _as_range(peers) != expected:
            raise RankingError("peers do not match the overlay peer set")
        if not len(expected):
            raise RankingError("empty peer set")
        row = self._matrix(level, own.start)[owner - own.start]
        return VpOrder(owner, level, expected, row)

    def cpv(self, owner: int, level: int, peers: Sequence[int] = None) -> CpvOrder:
        own = own_range(owner, level - 1, self.n)
        sibling = peer_range(owner, level, self.n)
        if not len(sibling):
            raise RankingError("empty peer set")
        col = self._matrix(level, sibling.start)[:, owner - own.start]
        order = np.argsort(col, kind="stable") + sibling.start
        return CpvOrder(owner, level, tuple(order.tolist()))


def cpv_order(seed: bytes, owner: int, level: int, peers: Sequence[int], n: int) -> CpvOrder:
    """Peers sorted by ``(VP_peer(owner), peer)`` ascending."""
    if len(peers) == 0:
        raise RankingError("empty peer set")
    view = own_range(owner, level - 1, n)
    keyed = sorted((vp_order(seed, p, level, view).rank_of(owner), p) for p in peers)
    return CpvOrder(owner, level, tuple(p for _, p in keyed))


def score(
    candidate: Contribution,
    best_inc: Optional[Contribution],
    verified_individuals: Iterable[Contribution] = (),
) -> int:
    """Weight a node could reach at this level by verifying ``candidate``."""
    if best_inc is None:
        return candidate.weight
    if candidate.bits & best_inc.bits == 0:
        return candidate.weight + best_inc.weight
    indiv = 0
    for c in verified_individuals:
        indiv |= c.bits
    return score_bits(candidate.bits, best_inc.bits, indiv)


def score_bits(cand: int, inc: int, indiv: int) -> int:
    """Bitmask form of :func:`score`; ``inc`` is 0 when there is no best yet."""
    if cand & inc == 0:
        return (cand | inc).bit_count()
    return (cand | (indiv & ~cand)).bit_count()


def select_window(
    pending: Iterable[tuple[int, Contribution]], vp: VpOrder, window: int
) -> list[tuple[int, Contribution]]:
    """Items whose sender rank lies in ``[v, v + window)``, ``v`` the best pending rank."""
    ranked = [(vp.rank_of(s), s, c) for s, c in pending]
    if not ranked:
        return []
    v = min(r for r, _, _ in ranked)
    return [(s, c) for r, s, c in ranked if r < v + window]


def update_window(size: int, verification_ok: bool) -> int:
    if verification_ok:
        return min(size * EXPANSION, WINDOW_MAX)
    return max(size // CONTRACTION, WINDOW_MIN)
