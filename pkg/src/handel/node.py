"""The Handel participant as a synchronous, event-driven state machine.

A :class:`Node` never performs I/O and never verifies on its own. The driver
(simulator or host application) feeds it events:

* :meth:`Node.handle_message` when a message arrives,
* :meth:`Node.next_verification` / :meth:`Node.apply_verification` to run the
  single verification slot (one contribution in flight at a time),
* :meth:`Node.on_tick` every dissemination period.

Transitions that emit messages return them; the driver delivers them.
Given the same event sequence a node always ends in the same state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from handel.overlay import num_levels, own_range, peer_range
from handel.ranking import INITIAL_WINDOW, RankCache, score_bits, update_window
from handel.scheme import Contribution, Scheme


class NodeError(RuntimeError):
    pass


@dataclass
class NodeConfig:
    threshold: int
    dissemination_period: float = 20.0
    fast_path_peers: int = 10
    level_delay: float = 50.0
    initial_window: int = INITIAL_WINDOW
    # verify every inc/out mutation; slow, meant for tests
    check_invariants: bool = False

    def __post_init__(self):
        if self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        if self.dissemination_period <= 0 or self.level_delay < 0 or self.fast_path_peers < 0:
            raise ValueError("timing parameters must be positive")


@dataclass(frozen=True)
class Message:
    level: int
    sender: int
    aggregate: Contribution
    individual: Contribution
    no_contact: bool = False


@dataclass
class LevelState:
    level: int
    peers: range
    ranks: list[int]
    cpv: tuple[int, ...]
    start_time: float
    window: int
    out_size: int
    out: Contribution
    inc: Optional[Contribution] = None
    cpv_cursor: int = 0
    unverified: dict[int, Contribution] = field(default_factory=dict)
    individuals: dict[int, Contribution] = field(default_factory=dict)
    individual_bits: int = 0
    fast_path_fired: bool = False
    dirty: bool = False

    @property
    def inc_bits(self) -> int:
        return 0 if self.inc is None else self.inc.bits

    @property
    def inc_complete(self) -> bool:
        return self.inc_bits.bit_count() == len(self.peers)

    @property
    def out_complete(self) -> bool:
        return self.out.weight == self.out_size

    def rank(self, peer: int) -> int:
        return self.ranks[peer - self.peers.start]

    def score(self, c: Contribution) -> int:
        return score_bits(c.bits, self.inc_bits, self.individual_bits)

    def redundant(self, c: Contribution) -> bool:
        inc = self.inc_bits
        return inc != 0 and c.bits & inc != 0 and self.score(c) <= inc.bit_count()


VerificationItem = tuple[int, int, Contribution]


class Node:
    def __init__(
        self,
        node_id: int,
        n: int,
        scheme: Scheme,
        config: NodeConfig,
        own: Contribution,
        now: float = 0.0,
        ranks: Optional[RankCache] = None,
    ):
        if own.n != n or own.bits != 1 << node_id or not scheme.verify(own):
            raise NodeError(f"node {node_id}: invalid own contribution")
        if config.threshold > n:
            raise NodeError("threshold exceeds participant count")
        self.id = node_id
        self.n = n
        self.scheme = scheme
        self.config = config
        self.own = own
        self.start = now
        self.L = num_levels(n)
        if ranks is None:
            ranks = RankCache(scheme.params.seed, n)
        self.blacklist: set[int] = set()
        self.no_contact: set[int] = set()
        self.in_flight: Optional[VerificationItem] = None
        self.done = False
        self.done_time: Optional[float] = None
        self.verifications = 0
        self.rejected = 0

        self.levels: list[Optional[LevelState]] = [None]
        out = own
        for lvl in range(1, self.L + 1):
            peers = peer_range(node_id, lvl, n)
            if len(peers):
                vp_ranks = ranks.vp(node_id, lvl, peers).ranks.tolist()
                cpv = ranks.cpv(node_id, lvl, peers).contact_order
            else:
                vp_ranks, cpv = [], ()
            ls = LevelState(
                level=lvl,
                peers=peers,
                ranks=vp_ranks,
                cpv=cpv,
                start_time=now + (lvl - 1) * config.level_delay,
                window=config.initial_window,
                out_size=len(own_range(node_id, lvl - 1, n)),
                out=out,
            )
            ls.fast_path_fired = ls.out_complete
            self.levels.append(ls)
        self.final = out
        self._check(own)
        self._update_done(now)

    # -- queries -------------------------------------------------------

    def inc(self, level: int) -> Optional[Contribution]:
        return self.own if level == 0 else self.levels[level].inc

    def out(self, level: int) -> Contribution:
        return self.final if level == self.L + 1 else self.levels[level].out

    def is_done(self) -> bool:
        return self.final.weight >= self.config.threshold

    def buffered(self) -> int:
        return sum(len(ls.unverified) for ls in self.levels[1:]) + (self.in_flight is not None)

    # -- intake --------------------------------------------------------

    def _well_formed(self, msg: Message) -> bool:
        if not 1 <= msg.level <= self.L:
            return False
        peers = self.levels[msg.level].peers
        if msg.sender not in peers:
            return False
        agg, ind = msg.aggregate, msg.individual
        if agg.n != self.n or ind.n != self.n or ind.bits != 1 << msg.sender:
            return False
        span = ((1 << len(peers)) - 1) << peers.start
        return agg.bits & ~span == 0

    def handle_message(self, msg: Message, now: float = 0.0) -> bool:
        """Buffer a message's contributions; return False if it was rejected or dropped."""
        if not self._well_formed(msg):
            self.rejected += 1
            return False
        sender = msg.sender
        if sender in self.blacklist:
            return False
        if msg.no_contact:
            self.no_contact.add(sender)
        ls = self.levels[msg.level]
        if ls.inc_complete:
            return False
        candidates = [msg.aggregate]
        if msg.individual.bits != msg.aggregate.bits and not ls.individual_bits & msg.individual.bits:
            candidates.append(msg.individual)
        current = ls.unverified.get(sender)
        best, best_key = None, None
        if current is not None and not ls.redundant(current):
            best, best_key = current, (ls.score(current), current.weight)
        for c in candidates:
            if ls.redundant(c):
                continue
            key = (ls.score(c), c.weight)
            if best_key is None or key > best_key:
                best, best_key = c, key
        if best is None:
            ls.unverified.pop(sender, None)
            return False
        ls.unverified[sender] = best
        return True

    # -- verification --------------------------------------------------

    def _prune(self, ls: LevelState) -> None:
        if ls.inc_complete:
            ls.unverified.clear()
        else:
            for s in [s for s, c in ls.unverified.items() if ls.redundant(c)]:
                del ls.unverified[s]
        ls.dirty = False

    def next_verification(self) -> Optional[VerificationItem]:
        """Claim the best buffered contribution for verification, or None.

        Per level, only senders whose VP rank is within ``window`` of the
        best-ranked pending sender are scored. The global pick maximizes
        score, then minimizes sender rank, then level. The item leaves the
        buffer and stays in flight until :meth:`apply_verification`.
        """
        if self.in_flight is not None:
            return None
        best = None
        for ls in self.levels[1:]:
            if not ls.unverified:
                continue
            if ls.dirty:
                self._prune(ls)
                if not ls.unverified:
                    continue
            ranked = [(ls.rank(s), s) for s in ls.unverified]
            v = min(ranked)[0]
            hi = v + ls.window
            for r, s in ranked:
                if r >= hi:
                    continue
                c = ls.unverified[s]
                key = (-ls.score(c), r, ls.level)
                if best is None or key < best[0]:
                    best = (key, ls.level, s, c)
        if best is None:
            return None
        _, level, sender, c = best
        del self.levels[level].unverified[sender]
        self.in_flight = (level, sender, c)
        return self.in_flight

    def _fold(self, ls: LevelState, acc: Contribution) -> Contribution:
        for ind in ls.individuals.values():
            if not acc.bits & ind.bits:
                acc = self.scheme.aggregate(acc, ind)
        return acc

    def apply_verification(
        self, item: VerificationItem, valid: bool, now: float = 0.0
    ) -> list[tuple[int, Message]]:
        if self.in_flight is None or item != self.in_flight:
            raise NodeError("verification result for an item that is not in flight")
        self.in_flight = None
        self.verifications += 1
        level, sender, c = item
        ls = self.levels[level]
        ls.window = update_window(ls.window, valid)
        if not valid:
            self.blacklist.add(sender)
            ls.unverified.pop(sender, None)
            ls.individuals.pop(sender, None)
            return []
        if ls.inc_complete:
            return []
        if c.is_individual and c.bits & ls.individual_bits == 0:
            ls.individuals[sender] = c
            ls.individual_bits |= c.bits
        inc = ls.inc
        if inc is None or not inc.bits & c.bits:
            best = c if inc is None else self.scheme.aggregate(inc, c)
        else:
            best = c
        best = self._fold(ls, best)
        if inc is not None:
            kept = self._fold(ls, inc)
            if kept.weight > best.weight:
                best = kept
        if inc is not None and best.weight <= inc.weight:
            return []
        self._check(best)
        ls.inc = best
        ls.dirty = True
        return self._propagate(level, now)

    def _propagate(self, level: int, now: float) -> list[tuple[int, Message]]:
        """Recompute out_k for k > level and fire fast paths for newly complete levels."""
        out = []
        acc = self.levels[level].out
        inc = self.levels[level].inc
        acc = self.scheme.aggregate(acc, inc) if inc is not None else acc
        for k in range(level + 1, self.L + 1):
            ls = self.levels[k]
            ls.out = acc
            self._check(acc)
            if ls.out_complete and not ls.fast_path_fired:
                ls.fast_path_fired = True
                out.extend(self._fast_path(ls))
            if ls.inc is not None:
                acc = self.scheme.aggregate(acc, ls.inc)
        self.final = acc
        self._check(acc)
        if self.levels[level].inc_complete:
            self._prune(self.levels[level])
        self._update_done(now)
        return out

    def _update_done(self, now: float) -> None:
        if not self.done and self.is_done():
            self.done = True
            self.done_time = now

    def _check(self, c: Contribution) -> None:
        if self.config.check_invariants and not self.scheme.verify(c):
            raise AssertionError(f"node {self.id} holds an invalid contribution {c.members()}")

    # -- dissemination -------------------------------------------------

    def _reachable(self, peer: int) -> bool:
        return peer not in self.blacklist and peer not in self.no_contact

    def _message(self, ls: LevelState) -> Message:
        return Message(ls.level, self.id, ls.out, self.own, self.done or ls.inc_complete)

    def _fast_path(self, ls: LevelState) -> list[tuple[int, Message]]:
        targets = [p for p in ls.cpv if self._reachable(p)][: self.config.fast_path_peers]
        msg = self._message(ls)
        return [(p, msg) for p in targets]

    def on_tick(self, now: float) -> list[tuple[int, Message]]:
        """One periodic round: a message to the next CPV peer of every active level."""
        out = []
        for ls in self.levels[1:]:
            if not ls.cpv or not (ls.out_complete or now >= ls.start_time):
                continue
            m = len(ls.cpv)
            for step in range(m):
                idx = (ls.cpv_cursor + step) % m
                peer = ls.cpv[idx]
                if self._reachable(peer):
                    ls.cpv_cursor = (idx + 1) % m
                    out.append((peer, self._message(ls)))
                    break
        return out
