"""End-to-end acceptance checks; each test records a one-line verdict."""

import hashlib
import math
import time
from functools import lru_cache
from statistics import mean, median

import numpy as np
import pytest

from _report import record
from handel import convergence as cv
from handel.cli import main
from handel.node import Message
from handel.overlay import num_levels, own_range, peer_set
from handel.ranking import WINDOW_MAX, WINDOW_MIN, update_window
from handel.scheme import Contribution, PublicParams, ReferenceScheme
from handel.simulator import Scenario, run
from handel.wire import decode_message, encode_message

HONEST = (("honest", 1.0),)


@lru_cache(maxsize=None)
def baseline(n: int, seed: int):
    return run(Scenario(n=n, seed=seed))


def test_01_safety_suite():
    rng = np.random.default_rng(20240601)
    kinds = ["fail_silent", "byz_minimal", "byz_invalid"]
    scenarios = [
        Scenario(n=512, seed=1, behaviors=(("byz_invalid", 0.5), ("honest", 0.5)), check_invariants=True),
        Scenario(n=384, seed=2, threshold_fraction=0.9,
                 behaviors=(("byz_invalid", 0.2), ("byz_minimal", 0.2), ("fail_silent", 0.1), ("honest", 0.5)),
                 check_invariants=True),
    ]
    while len(scenarios) < 50:
        k = len(scenarios)
        n = int(2 ** rng.uniform(3, 8))
        mix = {}
        if k % 5 == 4:
            for kind in kinds:
                mix[kind] = float(rng.choice([0.05, 0.1, 0.15]))
        elif k % 5:
            mix[kinds[k % 5 - 1]] = float(rng.choice([0.1, 0.25, 0.5]))
        mix["honest"] = 1.0 - sum(mix.values())
        scenarios.append(Scenario(
            n=n, seed=int(rng.integers(2**32)), threshold_fraction=float(rng.choice([0.51, 0.9, 0.999])),
            behaviors=tuple(sorted(mix.items())), check_invariants=True, max_sim_time_ms=8000.0,
        ))
    t0 = time.perf_counter()
    violations = []
    for s in scenarios:
        try:
            run(s)
        except AssertionError as e:  # raised by the nodes' invariant checks
            violations.append((s.n, s.behaviors, str(e)))
    elapsed = time.perf_counter() - t0
    ok = not violations and elapsed < 300
    record(1, "safety suite", ok, f"{len(scenarios)} scenarios, {len(violations)} invalid aggregates, {elapsed:.0f}s")
    assert not violations
    assert elapsed < 300


def test_02_termination():
    failures = []
    for n in (16, 128, 1024):
        for seed in range(10):
            m = baseline(n, seed)
            if not m.completed:
                failures.append((n, seed))
    record(2, "termination", not failures, f"30 runs (n=16/128/1024 x 10 seeds), incomplete: {failures or 'none'}")
    assert not failures


def test_03_fail_silent_robustness():
    runs = [run(Scenario(n=1024, seed=s, threshold_fraction=0.51, threshold_of="total",
                         behaviors=(("fail_silent", 0.25), ("honest", 0.75)))) for s in range(10)]
    done = sum(m.completed for m in runs)
    t_fail = mean(m.time_ms_avg for m in runs)
    t_base = mean(baseline(1024, s).time_ms_avg for s in range(10))
    ratio = t_fail / t_base
    ok = done == 10 and ratio <= 3
    record(3, "fail-silent robustness", ok,
           f"{done}/10 complete, {t_fail:.0f}ms vs {t_base:.0f}ms failure-free (x{ratio:.2f})")
    assert done == 10 and ratio <= 3


def test_04_polylog_scaling():
    t_small = median(baseline(128, s).time_ms_avg for s in range(5))
    big = [run(Scenario(n=2048, seed=s)) for s in range(5)]
    t_big = median(m.time_ms_avg for m in big)
    ratio = t_big / t_small
    record(4, "polylog scaling", ratio < 3 and all(m.completed for m in big),
           f"median t(2048)={t_big:.0f}ms, t(128)={t_small:.0f}ms, ratio {ratio:.2f}")
    assert all(m.completed for m in big)
    assert ratio < 3


def test_05_processing_complexity():
    n = 512
    log2n = math.ceil(math.log2(n))
    runs = [run(Scenario(n=n, seed=s)) for s in range(3)]
    avg = max(m.verifs_avg for m in runs)
    low = min(m.verifs_min for m in runs)
    ok = avg <= 10 * log2n**2 and low >= log2n
    record(5, "processing complexity", ok,
           f"n=512 worst per-run avg verifications {avg:.1f} (cap {10 * log2n**2}), min {low} (floor {log2n})")
    assert avg <= 10 * log2n**2
    assert low >= log2n


LOW_SHA = "df7a7f1cf408a48068a75102b8085d0c72b8f0960c0b92ffaf0ccaf3b83c3ebd"


def test_06_message_size():
    n = 4000
    sc = ReferenceScheme(PublicParams(n, bytes(32)))
    span = own_range(0, num_levels(n) - 1, n)
    bits = ((1 << len(span)) - 1) << span.start
    msg = Message(12, 0, Contribution(bits, n, sc.expected_payload(bits)), sc.individual(0))
    raw = encode_message(msg, n)
    ok = len(raw) <= 410 and hashlib.sha256(raw).hexdigest() == LOW_SHA and decode_message(raw, n) == msg
    record(6, "message size", ok, f"top-level n=4000 message is {len(raw)} bytes, golden digest matches={ok}")
    assert len(raw) <= 410
    assert hashlib.sha256(raw).hexdigest() == LOW_SHA


def test_07_window_dynamics():
    w, down = 128, 0
    while w > 1:
        w, down = update_window(w, False), down + 1
    w, up = 1, 0
    while w < 128:
        w, up = update_window(w, True), up + 1
    clamps = all(WINDOW_MIN <= update_window(s, ok) <= WINDOW_MAX for s in range(1, 129) for ok in (True, False))
    ok = down == 4 and up == 7 and clamps
    record(7, "window dynamics", ok, f"128->1 in {down} failures, 1->128 in {up} successes, clamps hold={clamps}")
    assert (down, up, clamps) == (4, 7, True)


def test_08_invalid_contribution_attack():
    results = []
    for seed in range(3):
        m = run(Scenario(n=256, seed=seed, behaviors=(("byz_invalid", 0.25), ("honest", 0.75)),
                         drain=True, check_invariants=True))
        results.append((m, baseline(256, seed)))
    completed = all(m.completed for m, _ in results)
    unattributed = sum(m.unattributed for m, _ in results)
    ratio = max(m.time_ms_avg / b.time_ms_avg for m, b in results)
    ok = completed and unattributed == 0 and ratio <= 5
    record(8, "invalid-contribution attack", ok,
           f"3 seeds complete={completed}, unblacklisted contacts={unattributed}, worst slowdown x{ratio:.2f}")
    assert completed
    assert unattributed == 0
    assert ratio <= 5


def test_09_chernoff_grid():
    grid = [(m, q, d) for m in (50, 200, 1000) for q in (0.05, 0.3) for d in (0.3, 1.0)]
    samples = 10**5
    worst = []
    for k, (m, q, d) in enumerate(grid):
        emp = cv.binomial_tail_rate(m, q, d, samples, seed=k)
        sigma = math.sqrt(emp * (1 - emp) / samples)
        worst.append(emp - cv.chernoff_bound(m, q, d) - 3 * sigma)
    ok = len(grid) == 12 and max(worst) <= 0
    record(9, "chernoff inequality", ok, f"12 cells x 1e5 samples, max(empirical - bound - 3 sigma) = {max(worst):.3g}")
    assert max(worst) <= 0


def test_10_homogenization_bound():
    n, b, b_max = 10, 0.15, 0.25
    delta = 1.0  # tau0 = 1 - 2 * 0.25 = 0.5
    ell = math.ceil(math.log2(10)) + 2
    trials = 10**4
    rate = cv.homogenization_failure_rate(n, b, b_max, delta, ell, trials, seed=10)
    bound = cv.homogenization_bound(n, ell, delta, b_max)
    sigma = math.sqrt(rate * (1 - rate) / trials)
    ok = rate <= bound + 3 * sigma
    record(10, "homogenization bound", ok, f"failure rate {rate:.4f} <= bound {bound:.4f} + 3 sigma")
    assert ok


def test_11_determinism(tmp_path):
    import importlib.util
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent
    spec = importlib.util.spec_from_file_location("make_golden", root / "scripts" / "make_golden.py")
    mg = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mg)
    mismatched = []
    for name, argv in mg.COMMANDS.items():
        outs = []
        for k in range(2):
            out = tmp_path / f"{k}-{name}"
            main([*argv, "--out", str(out)])
            outs.append(out.read_bytes())
        if not outs[0] == outs[1] == (root / "tests" / "golden" / name).read_bytes():
            mismatched.append(name)
    record(11, "determinism", not mismatched, f"{len(mg.COMMANDS)} subcommands, mismatches: {mismatched or 'none'}")
    assert not mismatched


def test_12_overlay():
    bad = []
    for n in range(1, 65):
        for i in range(n):
            seen = []
            for lvl in range(num_levels(n) + 1):
                members = list(peer_set(i, lvl, n))
                seen += members
                if any(i not in peer_set(j, lvl, n) for j in members):
                    bad.append((n, i, lvl))
            if sorted(seen) != list(range(n)):
                bad.append((n, i))
    fig = {lvl: sorted(peer_set(5, lvl, 16)) for lvl in range(5)}
    fig_ok = fig == {0: [5], 1: [4], 2: [6, 7], 3: [0, 1, 2, 3], 4: list(range(8, 16))}
    record(12, "overlay correctness", not bad and fig_ok,
           f"n=1..64 partition/symmetry violations {len(bad)}, node-5 view of 16 matches={fig_ok}")
    assert not bad and fig_ok
