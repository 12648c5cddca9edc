import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from handel import convergence as cv
from handel.convergence import (
    ConvergenceError,
    ConvergenceParams,
    batches,
    chernoff_bound,
    estimate_theorem_probability,
    homogenization_bound,
    homogenization_success,
    reproduction_bound,
    reproduction_success,
)


def test_chernoff_examples():
    assert chernoff_bound(10, 0.3, 1.0) == pytest.approx((math.e / 4) ** 3)
    assert chernoff_bound(0, 0.5, 0.7) == 1.0
    with pytest.raises(ConvergenceError):
        chernoff_bound(5, 1.5, 1.0)
    with pytest.raises(ConvergenceError):
        chernoff_bound(5, 0.5, 0.0)


@given(st.integers(0, 500), st.floats(0.01, 1.0), st.floats(0.01, 5.0))
def test_chernoff_in_unit_interval_and_decreasing(m, q, d):
    a, b = chernoff_bound(m, q, d), chernoff_bound(m + 1, q, d)
    assert 0 < a <= 1 and b <= a


def test_chernoff_dominates_monte_carlo():
    m, q, d = 200, 0.2, 0.5
    emp = cv.binomial_tail_rate(m, q, d, 10**5, seed=1)
    sigma = math.sqrt(max(emp * (1 - emp), 1e-12) / 10**5)
    assert emp <= chernoff_bound(m, q, d) + 3 * sigma


@pytest.mark.parametrize("n", range(1, 7))
def test_batch_nesting_exhaustive(n):
    for k in range(n):
        lower, upper = batches(k, n), batches(k + 1, n)
        for j, big in enumerate(upper):
            assert list(lower[2 * j]) + list(lower[2 * j + 1]) == list(big)


def test_homogenization_examples():
    assert homogenization_success(np.zeros(1024, bool), 6, 0.5, 0.2)
    assert not homogenization_success(np.ones(1024, bool), 6, 0.5, 0.2)
    with pytest.raises(ConvergenceError):
        homogenization_success(np.zeros(1000, bool), 3, 0.5, 0.2)


@settings(max_examples=80)
@given(st.lists(st.booleans(), min_size=64, max_size=64), st.integers(0, 6), st.integers(0, 63))
def test_homogenization_monotone(flags, level, flip):
    f = np.array(flags)
    before = homogenization_success(f, level, 0.5, 0.25)
    f[flip] = False
    assert homogenization_success(f, level, 0.5, 0.25) >= before


def test_homogenization_vs_union_bound():
    n, b, bmax, d = 10, 0.1, 0.2, 0.5
    ell = math.ceil(math.log2(10)) + 2
    trials = 10**4
    rate = cv.homogenization_failure_rate(n, b, bmax, d, ell, trials, seed=3)
    bound = homogenization_bound(n, ell, d, bmax)
    sigma = math.sqrt(max(rate * (1 - rate), 1 / trials) / trials)
    assert rate <= bound + 3 * sigma


def test_homogenization_rate_matches_direct_check():
    rng = np.random.default_rng(9)
    flags = rng.random((300, 256)) < 0.3
    direct = np.mean([not homogenization_success(f, 4, 0.3, 0.3) for f in flags])
    rate = cv.homogenization_failure_rate(8, 0.3, 0.3, 0.3, 4, 300, seed=9)
    # identical stream: first chunk covers all 300 trials
    assert rate == pytest.approx(direct)


def test_prefix_sampling_shape_and_membership():
    rng = np.random.default_rng(0)
    pre = cv.sample_prefixes(rng, 6, 3, 5)
    assert pre.shape == (64, 5)
    for i, row in enumerate(pre):
        sib = set(range(((i >> 3) ^ 1) << 3, (((i >> 3) ^ 1) << 3) + 8))
        assert set(row) <= sib and len(set(row)) == 5


def test_reproduction_all_honest_and_failure_exists():
    assert reproduction_success(np.zeros(256, bool), 0, 1.0, 4)
    # node 0 honest, everyone else Byzantine: its level-4 prefix cannot reach an honest peer
    flags = np.ones(256, bool)
    flags[0] = False
    assert not reproduction_success(flags, 0, 1.0, 4)
    with pytest.raises(ConvergenceError):
        reproduction_success(np.zeros(256, bool), 0, 3.0, 3)


def test_reproduction_vs_bound_n8():
    n, b = 8, 0.2
    tau0 = 1 - 2 * 0.25
    C = 1.01 * cv.c_lower_bound(tau0)
    start = math.ceil(math.log2(math.ceil(C * n)))
    rng = np.random.default_rng(4)
    trials = 10**4 // 4
    ok = sum(reproduction_success(rng.random(256) < b, rng, C, start) for _ in range(trials))
    bound = reproduction_bound(n, tau0, C)
    assert ok / trials >= 1 - bound  # vacuous when the bound exceeds 1


def test_params_defaults_and_validation():
    p = ConvergenceParams(n=10, b=0.2)
    assert p.delta == pytest.approx(1.0) and p.tau0 == pytest.approx(0.5)
    assert p.C > cv.c_lower_bound(p.tau0)
    assert cv.star_holds(p.r, p.delta, p.b_max) and not cv.star_holds(p.r - 1, p.delta, p.b_max)
    assert p.ell == 4 + p.r
    with pytest.raises(ConvergenceError, match="b"):
        ConvergenceParams(n=10, b=0.3)
    with pytest.raises(ConvergenceError, match="tau"):
        ConvergenceParams(n=10, b=0.1, tau=0.8)
    with pytest.raises(ConvergenceError, match="r"):
        ConvergenceParams(n=4, b=0.1)


def test_theorem_no_byzantine_always_succeeds():
    est = estimate_theorem_probability(ConvergenceParams(n=10, b=0.0, trials=30))
    assert est.rate == 1.0 and est.ci_high == 1.0


def test_success_non_decreasing_in_C():
    rates = []
    for C in (0.6, 1.0, 1.8):
        p = ConvergenceParams(n=10, b=0.25, C=C, r=4, trials=150, seed=2)
        rates.append(estimate_theorem_probability(p).rate)
    assert rates == sorted(rates)


def test_theorem_failure_below_bound_when_nontrivial():
    # with the default constants the bound at n=10 exceeds 1; check it stays consistent
    p = ConvergenceParams(n=10, b=0.2, trials=200, seed=1)
    est = estimate_theorem_probability(p)
    sigma = math.sqrt(max(est.rate * (1 - est.rate), 1 / p.trials) / p.trials)
    assert 1 - est.rate <= min(1.0, p.analytic_bound) + 3 * sigma
    p2 = ConvergenceParams(n=10, b=0.2, C=6.0, trials=200, seed=5)
    assert p2.analytic_bound < 1e-4
    est2 = estimate_theorem_probability(p2)
    sigma2 = math.sqrt(max(est2.rate * (1 - est2.rate), 1 / p2.trials) / p2.trials)
    assert 1 - est2.rate <= p2.analytic_bound + 3 * sigma2


def test_wilson_interval():
    e = cv.wilson(50, 100)
    assert e.ci_low < 0.5 < e.ci_high and e.rate == 0.5
