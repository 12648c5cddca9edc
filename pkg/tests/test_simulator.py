import numpy as np
import pytest

from handel import simulator as sim
from handel.simulator import (
    Behavior,
    ConfigError,
    Latencies,
    LatencyModel,
    Scenario,
    Simulation,
    latency,
    run,
    run_all,
    sample_verification_time,
    sample_verification_times,
    sweep,
)

ZERO_LAT = LatencyModel.uniform(0.0)


def test_aws_table_lookups():
    m = LatencyModel.aws()
    assert m.region_latency("Oregon", "Virginia") == 81
    assert m.region_latency("Frankfurt", "London") == 13
    assert m.region_latency("Sydney", "Frankfurt") == 282
    mat = m.region_matrix()
    assert (mat == mat.T).all() and mat.shape == (11, 11)
    with pytest.raises(ConfigError):
        m.region_latency("Oregon", "Atlantis")


def test_node_latency_symmetric_and_zero_on_self():
    rng = np.random.default_rng(1)
    for model in (LatencyModel.aws(), LatencyModel.uniform(30, 20)):
        lat = Latencies(model, 40, rng)
        for a in range(40):
            assert latency(a, a, lat) == 0
            for b in range(a + 1, 40):
                assert latency(a, b, lat) == latency(b, a, lat) >= 0
    lat = Latencies(LatencyModel.uniform(30, 20), 40, rng)
    vals = [lat.ms(a, b) for a in range(40) for b in range(a + 1, 40)]
    assert 30 <= min(vals) and max(vals) <= 50


def test_latency_csv(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("region,A,B\nA,1,40\nB,40,2\n")
    m = LatencyModel.from_csv(p)
    assert m.regions == ("A", "B") and m.region_latency("A", "B") == 40
    p.write_text("A,B\n0,40\n40,0\n")
    assert LatencyModel.from_csv(p).region_latency("B", "A") == 40
    p.write_text("A,B\n0,40\n41,0\n")
    with pytest.raises(ConfigError):
        LatencyModel.from_csv(p)
    with pytest.raises(ConfigError):
        LatencyModel.uniform(-1)


def test_verification_time_samples():
    rng = np.random.default_rng(0)
    assert sample_verification_time(rng, 1.0, sigma=0.0) == 4.0
    assert sample_verification_time(rng, 3.0, sigma=0.0) == 12.0
    xs = sample_verification_times(rng, 1 / 3, 10**6)
    assert xs.size == 10**6 and (xs > 0).all()
    mean3 = np.mean([sample_verification_time(rng, 3.0) for _ in range(10**5)])
    assert abs(mean3 - 12.0) <= 0.05 * 12.0
    with pytest.raises(ConfigError):
        sample_verification_time(rng, 1.0, sigma=0.5)


def test_scenario_validation():
    with pytest.raises(ConfigError, match="behaviors"):
        Scenario(behaviors=(("honest", 0.8), ("fail_silent", 0.4)))
    with pytest.raises(ConfigError, match="behaviors"):
        Scenario(behaviors=(("honest", 0.5), ("gremlin", 0.5)))
    with pytest.raises(ConfigError, match="threshold"):
        Scenario(threshold_fraction=0.8, threshold_of="total", behaviors=(("honest", 0.7), ("fail_silent", 0.3)))
    with pytest.raises(ConfigError):
        Scenario(n=1)
    s = Scenario(n=100, behaviors=(("honest", 0.75), ("byz_invalid", 0.25)))
    assert s.counts()[Behavior.BYZ_INVALID] == 25 and s.threshold() == 75
    assert Scenario(n=100, threshold_fraction=0.51, threshold_of="total",
                    behaviors=(("honest", 0.75), ("fail_silent", 0.25))).threshold() == 51


def test_two_nodes_zero_latency():
    m = run(Scenario(n=2, latency=ZERO_LAT, start_jitter_ms=0.0, check_invariants=True))
    assert m.completed and m.threshold == 2
    assert max(m.time_ms) <= 3 * 20.0


def test_determinism_n128():
    s = Scenario(n=128, seed=11)
    a, b = run(s), run(s)
    assert a == b
    assert sim.metrics_row(0, a) == sim.metrics_row(0, b)


def test_fail_silent_robustness_and_silence():
    s = Scenario(n=128, seed=3, threshold_fraction=0.51, threshold_of="total",
                 behaviors=(("fail_silent", 0.25), ("honest", 0.75)), check_invariants=True)
    simu = Simulation(s)
    m = simu.run()
    assert m.completed
    silent = [i for i in range(128) if simu.behavior[i] is Behavior.FAIL_SILENT]
    assert len(silent) == 32 and all(simu.sent[i] == 0 for i in silent)


def test_invalid_senders_get_blacklisted():
    s = Scenario(n=64, seed=5, behaviors=(("byz_invalid", 0.25), ("honest", 0.75)),
                 check_invariants=True, drain=True)
    simu = Simulation(s)
    m = simu.run()
    assert m.completed and m.drained and simu.contacts
    assert m.unattributed == 0
    for b, h in simu.contacts:
        assert b in simu.nodes[h].blacklist


def test_minimal_contributors_get_included():
    s = Scenario(n=64, seed=5, behaviors=(("byz_minimal", 0.25), ("honest", 0.75)), check_invariants=True)
    m = run(s)
    assert m.completed and m.byz_in_aggregates > 0


def test_buffer_bound_and_safety_under_mixed_behaviors():
    s = Scenario(n=96, seed=2, threshold_fraction=0.9,
                 behaviors=(("byz_invalid", 0.2), ("byz_minimal", 0.1), ("fail_silent", 0.1), ("honest", 0.6)),
                 check_invariants=True)
    m = run(s)
    assert m.completed and 0 < m.max_buffered <= 96


def test_timeout_is_reported_not_raised():
    m = run(Scenario(n=64, max_sim_time_ms=50.0))
    assert not m.completed and len(m.time_ms) < 64


def test_events_never_scheduled_in_the_past():
    simu = Simulation(Scenario(n=8))
    simu.now_us = 100
    with pytest.raises(AssertionError):
        simu._push(99, 0, 0)


def test_run_all_uses_distinct_seeds():
    runs = run_all(Scenario(n=32, runs=3))
    assert len(runs) == 3 and len({r.time_ms_avg for r in runs}) == 3


def test_sweep_rows_and_dp_tradeoff():
    base = Scenario(n=128, runs=2, seed=4)
    res = sweep(base, "dissemination_period", [10, 20, 50])
    assert [v for v, _ in res] == [10, 20, 50]
    msgs = [np.mean([m.msgs_avg for m in runs]) for _, runs in res]
    assert msgs[0] > msgs[1] > msgs[2]
    with pytest.raises(ConfigError):
        sweep(base, "colour", [1])


def test_sweep_axis_behavior_fraction():
    s = sim.with_axis(Scenario(), "fail_silent", 0.3)
    assert s.mix == {"fail_silent": 0.3, "honest": pytest.approx(0.7)}
    assert sim.with_axis(Scenario(), "n", 64).n == 64
