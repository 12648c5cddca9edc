"""Deterministic discrete-event simulation of a Handel run.

The simulated clock counts integer microseconds and events are ordered by
``(time, sequence number)``, so a scenario (seed included) always produces
the same metrics. Four node behaviors are modeled:

``honest``
    runs :class:`handel.node.Node`; one verification at a time.
``fail_silent``
    never sends, never verifies.
``byz_minimal``
    every dissemination period, on every level, pushes its own (valid)
    individual contribution as its aggregate to the next honest peer of its
    contact order.
``byz_invalid``
    same cadence, but the aggregate claims the whole level and carries a
    forged payload, so it scores as high as possible and fails verification.

Adversary messages arrive instantly by default (``byzantine_latency``).
"""

from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from statistics import mean
from typing import Optional, Sequence

import numpy as np

from handel.node import Message, Node, NodeConfig
from handel.overlay import Roster, num_levels, own_range, peer_range
from handel.prng import keyed_stream
from handel.ranking import INITIAL_WINDOW, RankCache
from handel.scheme import Contribution, PublicParams, ReferenceScheme
from handel.wire import message_size


class ConfigError(ValueError):
    pass


class Behavior(str, Enum):
    HONEST = "honest"
    FAIL_SILENT = "fail_silent"
    BYZ_MINIMAL = "byz_minimal"
    BYZ_INVALID = "byz_invalid"


ADVERSARIES = (Behavior.FAIL_SILENT, Behavior.BYZ_MINIMAL, Behavior.BYZ_INVALID)

AWS_REGIONS = (
    "Oregon", "Virginia", "Mumbai", "Seoul", "Singapore", "Sydney",
    "Tokyo", "Canada", "Frankfurt", "Ireland", "London",
)
# upper triangle, row by row, of the measured inter-region latencies (ms)
_AWS_UPPER = (
    (81, 216, 126, 165, 138, 97, 64, 164, 131, 141),
    (182, 181, 232, 195, 167, 13, 88, 80, 75),
    (152, 62, 223, 123, 194, 111, 122, 113),
    (97, 133, 35, 184, 259, 254, 264),
    (169, 69, 218, 162, 174, 171),
    (105, 210, 282, 269, 271),
    (156, 235, 222, 234),
    (101, 78, 87),
    (24, 13),
    (12,),
)
INTRA_REGION_MS = 2.0


def aws_matrix(intra_ms: float = INTRA_REGION_MS) -> np.ndarray:
    k = len(AWS_REGIONS)
    m = np.full((k, k), float(intra_ms))
    for a, row in enumerate(_AWS_UPPER):
        for off, v in enumerate(row):
            b = a + 1 + off
            m[a, b] = m[b, a] = v
    return m


@dataclass(frozen=True)
class LatencyModel:
    """Region matrix (diagonal = latency between distinct nodes of one region)
    or parametric ``base + U[0, jitter]`` per node pair."""

    regions: tuple[str, ...] = AWS_REGIONS
    matrix: Optional[tuple[tuple[float, ...], ...]] = None
    base_ms: float = 0.0
    jitter_ms: float = 0.0
    parametric: bool = False

    def __post_init__(self):
        if self.parametric:
            if self.base_ms < 0 or self.jitter_ms < 0:
                raise ConfigError("latency: base and jitter must be >= 0")
            return
        m = np.asarray(self.region_matrix())
        if m.shape != (len(self.regions), len(self.regions)):
            raise ConfigError("latency: matrix shape does not match region list")
        if (m < 0).any() or not np.allclose(m, m.T):
            raise ConfigError("latency: matrix must be symmetric and non-negative")

    @classmethod
    def aws(cls) -> "LatencyModel":
        return cls()

    @classmethod
    def uniform(cls, base_ms: float, jitter_ms: float = 0.0) -> "LatencyModel":
        return cls(regions=(), base_ms=base_ms, jitter_ms=jitter_ms, parametric=True)

    @classmethod
    def from_csv(cls, path: str | Path) -> "LatencyModel":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        header = [h.strip() for h in rows[0]]
        body = []
        for r in rows[1:]:
            cells = [c.strip() for c in r]
            try:
                float(cells[0])
            except ValueError:
                cells = cells[1:]
            body.append(tuple(float(c) for c in cells))
        if header and len(header) == len(body) + 1:
            header = header[1:]
        return cls(regions=tuple(header), matrix=tuple(body))

    def region_matrix(self) -> np.ndarray:
        if self.matrix is None:
            return aws_matrix()
        return np.asarray(self.matrix, dtype=float)

    def region_latency(self, a: str, b: str) -> float:
        try:
            ia, ib = self.regions.index(a), self.regions.index(b)
        except ValueError as e:
            raise ConfigError(f"unknown region: {e}") from None
        return float(self.region_matrix()[ia, ib])


class Latencies:
    """Per-node-pair one-way latencies in microseconds, fixed at setup."""

    def __init__(self, model: LatencyModel, n: int, rng: np.random.Generator):
        self.model = model
        self.n = n
        if model.parametric:
            draw = model.base_ms + model.jitter_ms * rng.random((n, n))
            upper = np.triu(draw, 1)
            self._pair = np.rint((upper + upper.T) * 1000).astype(np.int64)
            self.region_of = None
        else:
            k = len(model.regions)
            self.region_of = rng.integers(0, k, size=n)
            self._region_us = np.rint(model.region_matrix() * 1000).astype(np.int64)
            self._pair = None

    def us(self, a: int, b: int) -> int:
        if a == b:
            return 0
        if self._pair is not None:
            return int(self._pair[a, b])
        return int(self._region_us[self.region_of[a], self.region_of[b]])

    def ms(self, a: int, b: int) -> float:
        return self.us(a, b) / 1000.0


def latency(a: int, b: int, lat: Latencies) -> float:
    """One-way latency between nodes ``a`` and ``b`` in milliseconds."""
    return lat.ms(a, b)


def truncated_normal(rng: np.random.Generator, mu: float, sigma: float, lo: float, hi: float) -> float:
    if sigma == 0:
        return min(max(mu, lo), hi)
    while True:
        x = rng.normal(mu, sigma)
        if lo <= x <= hi:
            return float(x)


def sample_verification_time(
    rng: np.random.Generator, speed_factor: float, mean_ms: float = 4.0, sigma: float = 0.1
) -> float:
    """``mean_ms * speed_factor * X`` with ``X ~ N(1, sigma)`` truncated to ``1 +- 3 sigma``.

    The truncation is symmetric, so the mean is exactly ``mean_ms * speed_factor``.
    """
    if not 0 <= sigma < 1 / 3:
        raise ConfigError("verification sigma must be in [0, 1/3)")
    x = truncated_normal(rng, 1.0, sigma, 1 - 3 * sigma, 1 + 3 * sigma)
    return mean_ms * speed_factor * x


def sample_verification_times(
    rng: np.random.Generator, speed_factor: float, size: int, mean_ms: float = 4.0, sigma: float = 0.1
) -> np.ndarray:
    """Vectorized :func:`sample_verification_time` (same distribution, different stream use)."""
    if not 0 <= sigma < 1 / 3:
        raise ConfigError("verification sigma must be in [0, 1/3)")
    out = np.empty(0)
    while out.size < size:
        x = rng.normal(1.0, sigma, size - out.size) if sigma else np.ones(size)
        out = np.concatenate([out, x[np.abs(x - 1.0) <= 3 * sigma]])
    return mean_ms * speed_factor * out


@dataclass(frozen=True)
class Scenario:
    n: int = 128
    seed: int = 0
    threshold_fraction: float = 0.999
    threshold_of: str = "honest"  # or "total"
    behaviors: tuple[tuple[str, float], ...] = (("honest", 1.0),)
    latency: LatencyModel = field(default_factory=LatencyModel.aws)
    start_jitter_ms: float = 100.0
    verify_mean_ms: float = 4.0
    verify_sigma: float = 0.1
    speed_factor_range: tuple[float, float] = (1 / 3, 3.0)
    speed_sigma: float = 0.5
    byzantine_latency: str = "instant"  # or "network"
    max_sim_time_ms: float = 20_000.0
    runs: int = 5
    dissemination_period: float = 20.0
    fast_path_peers: int = 10
    level_delay: float = 50.0
    initial_window: int = INITIAL_WINDOW
    check_invariants: bool = False
    # after every honest node is done, stop all sending and let honest nodes
    # verify what they already received; metrics are taken before the drain
    drain: bool = False

    def __post_init__(self):
        mix = dict(self.behaviors)
        if self.n < 2:
            raise ConfigError("n: need at least 2 participants")
        unknown = set(mix) - {b.value for b in Behavior}
        if unknown:
            raise ConfigError(f"behaviors: unknown kind(s) {sorted(unknown)}")
        negative = {k: f for k, f in mix.items() if f < 0}
        if negative:
            raise ConfigError(
                f"behaviors: fractions must be >= 0 and sum to 1 (negative: {negative}; "
                f"adversary fractions sum to {sum(f for k, f in mix.items() if k != 'honest'):g})"
            )
        if not math.isclose(sum(mix.values()), 1.0, abs_tol=1e-9):
            raise ConfigError(f"behaviors: fractions must sum to 1 (got {sum(mix.values()):g})")
        if not 0 < self.threshold_fraction <= 1:
            raise ConfigError("threshold_fraction: must be in (0, 1]")
        if self.threshold_of not in ("honest", "total"):
            raise ConfigError("threshold_of: must be 'honest' or 'total'")
        honest = mix.get("honest", 0.0)
        if self.threshold_of == "total" and self.threshold_fraction > honest + 1e-12:
            raise ConfigError(
                f"threshold_fraction: {self.threshold_fraction} of all nodes exceeds the honest "
                f"fraction {honest}; honest nodes alone could never reach it"
            )
        if self.byzantine_latency not in ("instant", "network"):
            raise ConfigError("byzantine_latency: must be 'instant' or 'network'")
        lo, hi = self.speed_factor_range
        if not 0 < lo <= 1 <= hi:
            raise ConfigError("speed_factor_range: need 0 < low <= 1 <= high")
        if self.runs < 1 or self.max_sim_time_ms <= 0 or self.start_jitter_ms < 0:
            raise ConfigError("runs, max_sim_time_ms and start_jitter_ms must be positive")
        if self.dissemination_period <= 0 or self.level_delay < 0 or self.fast_path_peers < 0:
            raise ConfigError("dissemination_period, level_delay, fast_path_peers must be positive")

    @property
    def mix(self) -> dict[str, float]:
        return dict(self.behaviors)

    def counts(self) -> dict[Behavior, int]:
        out = {b: int(round(self.mix.get(b.value, 0.0) * self.n)) for b in ADVERSARIES}
        out[Behavior.HONEST] = self.n - sum(out.values())
        if out[Behavior.HONEST] < 1:
            raise ConfigError("behaviors: no honest node left")
        return out

    def threshold(self) -> int:
        honest = self.counts()[Behavior.HONEST]
        base = honest if self.threshold_of == "honest" else self.n
        t = max(1, math.ceil(self.threshold_fraction * base - 1e-9))
        if t > honest:
            raise ConfigError(f"threshold {t} exceeds the {honest} honest nodes")
        return t

    def adversary(self) -> tuple[str, float]:
        """The dominant non-honest kind and its fraction (``honest, 0`` if none)."""
        adv = [(f, k) for k, f in self.behaviors if k != "honest" and f > 0]
        if not adv:
            return "honest", 0.0
        f, k = max(adv)
        return k, f

    def with_run(self, r: int) -> "Scenario":
        return replace(self, seed=int.from_bytes(keyed_stream("run", self.seed, r, nbytes=8), "little"))


@dataclass
class RunMetrics:
    n: int
    behavior_kind: str
    behavior_fraction: float
    threshold: int
    completed: bool
    end_time_ms: float
    time_ms: list[float]
    messages: list[int]
    bytes_sent: list[int]
    verifications: list[int]
    events: int = 0
    unattributed: int = 0  # (byz_invalid, honest) contact pairs without a blacklist entry
    byz_in_aggregates: int = 0  # byz_minimal ids inside honest final aggregates
    max_buffered: int = 0
    drained: bool = False  # queue emptied after completion (``Scenario.drain``)

    @property
    def time_ms_avg(self) -> float:
        return mean(self.time_ms) if self.time_ms else float("nan")

    @property
    def time_ms_max(self) -> float:
        return max(self.time_ms) if self.time_ms else float("nan")

    @property
    def msgs_avg(self) -> float:
        return mean(self.messages)

    @property
    def bytes_avg(self) -> float:
        return mean(self.bytes_sent)

    @property
    def verifs_min(self) -> int:
        return min(self.verifications)

    @property
    def verifs_avg(self) -> float:
        return mean(self.verifications)

    @property
    def verifs_max(self) -> int:
        return max(self.verifications)


_START, _TICK, _DELIVER, _VERIFIED = range(4)


class Simulation:
    def __init__(self, scenario: Scenario):
        sc = self.scenario = scenario
        n = self.n = sc.n
        self.ss = np.random.SeedSequence(sc.seed)
        setup_rng = np.random.default_rng(self.ss.spawn(1)[0])
        shared = keyed_stream("shared", sc.seed, nbytes=32)
        self.params = PublicParams(n, shared, b"handel")
        self.scheme = ReferenceScheme(self.params)
        self.roster = Roster.build(n, shared)
        self.ranks = RankCache(shared, n)
        self.threshold = sc.threshold()
        self.latencies = Latencies(sc.latency, n, setup_rng)

        # behaviors are drawn over original indices, then mapped through the id shuffle
        counts = sc.counts()
        order = setup_rng.permutation(n)
        self.behavior = [Behavior.HONEST] * n
        pos = 0
        for kind in ADVERSARIES:
            for idx in order[pos:pos + counts[kind]]:
                self.behavior[self.roster.id_of[int(idx)]] = kind
            pos += counts[kind]
        self.honest = [i for i in range(n) if self.behavior[i] is Behavior.HONEST]
        self.start_us = [int(round(x * 1000)) for x in setup_rng.uniform(0, sc.start_jitter_ms, n)]
        lo, hi = sc.speed_factor_range
        self.speed = [truncated_normal(setup_rng, 1.0, sc.speed_sigma, lo, hi) for _ in range(n)]
        self.verify_rng = [np.random.default_rng(s) for s in self.ss.spawn(n)]

        config = NodeConfig(
            threshold=self.threshold,
            dissemination_period=sc.dissemination_period,
            fast_path_peers=sc.fast_path_peers,
            level_delay=sc.level_delay,
            initial_window=sc.initial_window,
            check_invariants=sc.check_invariants,
        )
        self.nodes: dict[int, Node] = {
            i: Node(i, n, self.scheme, config, self.scheme.individual(i), self.start_us[i] / 1000, self.ranks)
            for i in self.honest
        }
        self.L = num_levels(n)
        self._byz_targets: dict[int, list[tuple[int, list[int]]]] = {}
        self._byz_cursor: dict[tuple[int, int], int] = {}
        for i in range(n):
            if self.behavior[i] in (Behavior.BYZ_MINIMAL, Behavior.BYZ_INVALID):
                per_level = []
                for lvl in range(1, self.L + 1):
                    peers = peer_range(i, lvl, n)
                    if not len(peers):
                        continue
                    cpv = self.ranks.cpv(i, lvl).contact_order
                    targets = [p for p in cpv if self.behavior[p] is Behavior.HONEST]
                    if targets:
                        per_level.append((lvl, targets))
                self._byz_targets[i] = per_level

        self.sent = [0] * n
        self.sent_bytes = [0] * n
        self.busy = [False] * n
        self.contacts: set[tuple[int, int]] = set()
        self.max_buffered = 0
        self._sizes: dict[tuple[int, int], int] = {}
        self._queue: list = []
        self._seq = 0
        self.now_us = 0
        self.events = 0
        self._remaining = len(self.honest)
        self.draining = False

    # -- event plumbing --------------------------------------------------

    def _push(self, t_us: int, kind: int, a, b=None) -> None:
        if t_us < self.now_us:
            raise AssertionError("event scheduled in the past")
        self._seq += 1
        heapq.heappush(self._queue, (t_us, self._seq, kind, a, b))

    def _send(self, src: int, dst: int, msg: Message) -> None:
        if self.draining:
            return
        self.sent[src] += 1
        key = (src, msg.level)
        size = self._sizes.get(key)
        if size is None:
            size = self._sizes[key] = message_size(src, msg.level, self.n)
        self.sent_bytes[src] += size
        if self.behavior[src] is Behavior.BYZ_INVALID:
            self.contacts.add((src, dst))
        if self.behavior[dst] is not Behavior.HONEST:
            return
        if self.behavior[src] is not Behavior.HONEST and self.scenario.byzantine_latency == "instant":
            delay = 0
        else:
            delay = self.latencies.us(src, dst)
        self._push(self.now_us + delay, _DELIVER, dst, msg)

    def _try_verify(self, i: int) -> None:
        if self.busy[i] or self.now_us < self.start_us[i]:
            return
        node = self.nodes[i]
        item = node.next_verification()
        if item is None:
            return
        self.busy[i] = True
        dur = sample_verification_time(
            self.verify_rng[i], self.speed[i], self.scenario.verify_mean_ms, self.scenario.verify_sigma
        )
        self._push(self.now_us + max(1, int(round(dur * 1000))), _VERIFIED, i, item)

    def _forge(self, i: int, lvl: int) -> Message:
        own = self.scheme.individual(i)
        if self.behavior[i] is Behavior.BYZ_MINIMAL:
            return Message(lvl, i, own, own)
        span = own_range(i, lvl - 1, self.n)
        bits = ((1 << len(span)) - 1) << span.start
        payload = keyed_stream("forged", self.scenario.seed, i, lvl, nbytes=64)
        if payload == self.scheme.expected_payload(bits):
            payload = bytes([payload[0] ^ 1]) + payload[1:]
        return Message(lvl, i, Contribution(bits, self.n, payload), own)

    # -- main loop -------------------------------------------------------

    def run(self) -> RunMetrics:
        sc = self.scenario
        dp_us = int(round(sc.dissemination_period * 1000))
        for i in range(self.n):
            if self.behavior[i] is not Behavior.FAIL_SILENT:
                self._push(self.start_us[i], _START, i)
        limit = int(round(sc.max_sim_time_ms * 1000))
        last = 0
        snapshot = None
        while self._queue:
            if self._remaining == 0 and snapshot is None:
                snapshot = self._metrics()
                if not sc.drain:
                    break
                self.draining = True
            t, _, kind, a, b = heapq.heappop(self._queue)
            if t > limit:
                break
            if t < last:
                raise AssertionError("event causality violated")
            last = self.now_us = t
            now = t / 1000.0
            if kind == _DELIVER:
                self.events += 1
                node = self.nodes[a]
                node.handle_message(b, now)
                if sc.check_invariants:
                    self.max_buffered = max(self.max_buffered, node.buffered())
                self._try_verify(a)
            elif kind == _VERIFIED:
                self.events += 1
                node = self.nodes[a]
                self.busy[a] = False
                was_done = node.done
                for dst, msg in node.apply_verification(b, self.scheme.verify(b[2]), now):
                    self._send(a, dst, msg)
                if node.done and not was_done:
                    self._remaining -= 1
                self._try_verify(a)
            elif self.draining:
                continue
            else:
                self.events += 1
                if a in self.nodes:
                    node = self.nodes[a]
                    if kind == _START and node.done:
                        self._remaining -= 1
                    for dst, msg in node.on_tick(now):
                        self._send(a, dst, msg)
                    if kind == _START:
                        self._try_verify(a)
                else:
                    for lvl, targets in self._byz_targets.get(a, ()):
                        c = self._byz_cursor.get((a, lvl), 0)
                        self._send(a, targets[c % len(targets)], self._forge(a, lvl))
                        self._byz_cursor[(a, lvl)] = c + 1
                self._push(t + dp_us, _TICK, a)
        if snapshot is None:
            return self._metrics()
        snapshot.unattributed = self._unattributed()
        snapshot.drained = not self._queue
        return snapshot

    def _unattributed(self) -> int:
        invalid = {i for i in range(self.n) if self.behavior[i] is Behavior.BYZ_INVALID}
        return sum(1 for b, h in self.contacts if b in invalid and b not in self.nodes[h].blacklist)

    def _metrics(self) -> RunMetrics:
        sc = self.scenario
        nodes = [self.nodes[i] for i in self.honest]
        completed = all(nd.done for nd in nodes)
        kind, frac = sc.adversary()
        minimal_bits = 0
        for i in range(self.n):
            if self.behavior[i] is Behavior.BYZ_MINIMAL:
                minimal_bits |= 1 << i
        byz_in = sum(1 for nd in nodes if nd.final.bits & minimal_bits)
        return RunMetrics(
            n=self.n,
            behavior_kind=kind,
            behavior_fraction=frac,
            threshold=self.threshold,
            completed=completed,
            end_time_ms=self.now_us / 1000.0,
            time_ms=[nd.done_time for nd in nodes if nd.done_time is not None],
            messages=[self.sent[i] for i in self.honest],
            bytes_sent=[self.sent_bytes[i] for i in self.honest],
            verifications=[nd.verifications for nd in nodes],
            events=self.events,
            unattributed=self._unattributed(),
            byz_in_aggregates=byz_in,
            max_buffered=self.max_buffered,
        )


def run(scenario: Scenario) -> RunMetrics:
    """Simulate one run of ``scenario`` (its seed is used as is)."""
    return Simulation(scenario).run()


def run_all(scenario: Scenario) -> list[RunMetrics]:
    """``scenario.runs`` repetitions with seeds derived from ``scenario.seed``."""
    return [run(scenario.with_run(r)) for r in range(scenario.runs)]


CSV_COLUMNS = (
    "run_id", "n", "behavior_kind", "behavior_fraction", "time_ms_avg", "time_ms_max",
    "msgs_avg", "bytes_avg", "verifs_min", "verifs_avg", "verifs_max", "completed",
)

SWEEP_AXES = ("dissemination_period", "fast_path_peers", "level_delay", "n") + tuple(
    b.value for b in ADVERSARIES
)


def _fmt(x: float) -> str:
    return "nan" if x != x else f"{x:.3f}"


def metrics_row(run_id, m: RunMetrics) -> list[str]:
    return [
        str(run_id), str(m.n), m.behavior_kind, f"{m.behavior_fraction:g}",
        _fmt(m.time_ms_avg), _fmt(m.time_ms_max), _fmt(m.msgs_avg), _fmt(m.bytes_avg),
        str(m.verifs_min), _fmt(m.verifs_avg), str(m.verifs_max), str(int(m.completed)),
    ]


def summary_row(run_id, runs: Sequence[RunMetrics]) -> list[str]:
    """One row aggregating several runs: means of averages, extremes of extremes."""
    first = runs[0]
    times = [m.time_ms_avg for m in runs]
    return [
        str(run_id), str(first.n), first.behavior_kind, f"{first.behavior_fraction:g}",
        _fmt(mean(times)), _fmt(max(m.time_ms_max for m in runs)),
        _fmt(mean(m.msgs_avg for m in runs)), _fmt(mean(m.bytes_avg for m in runs)),
        str(min(m.verifs_min for m in runs)), _fmt(mean(m.verifs_avg for m in runs)),
        str(max(m.verifs_max for m in runs)), str(int(all(m.completed for m in runs))),
    ]


def with_axis(base: Scenario, axis: str, value) -> Scenario:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    if axis == "n":
        return replace(base, n=int(value))
    if axis == "fast_path_peers":
        return replace(base, fast_path_peers=int(value))
    if axis in ("dissemination_period", "level_delay"):
        return replace(base, **{axis: float(value)})
    mix = {k: f for k, f in base.behaviors if k not in ("honest", axis)}
    mix[axis] = float(value)
    mix["honest"] = 1.0 - sum(mix.values())
    return replace(base, behaviors=tuple(sorted(mix.items())))


def sweep(base: Scenario, axis: str, values: Sequence) -> list[tuple[object, list[RunMetrics]]]:
    scenarios = [with_axis(base, axis, v) for v in values]
    return [(v, run_all(s)) for v, s in zip(values, scenarios)]


def to_csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def scenario_fields() -> list[str]:
    return [f.name for f in fields(Scenario)]
