"""Monte-Carlo check of the probabilistic convergence argument.

Model: ``N = 2**n`` nodes, each Byzantine independently with probability
``b``. Level ``k`` batches are ``I[k, j] = [j 2**k, (j+1) 2**k)`` and node
``i``'s level-``k`` peer set is the batch sibling to the one holding ``i``
(size ``2**k``), for ``k`` in ``[ell, n)``.

* Homogenization at level ``ell`` succeeds when no batch holds more than
  ``(1+delta) b_max 2**ell`` Byzantine nodes.
* Reproduction succeeds when, at every level ``k >= ell``, every honest
  node's priority prefix of length ``ceil(C n)`` contains an honest node and
  at most ``2 ceil(C n)`` peers put it in their own prefix.

Prefixes are uniform ``ceil(C n)``-subsets of the peer set, drawn as the
smallest keys of i.i.d. uniforms, so a larger ``C`` on the same random
stream always yields a superset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.stats import binomtest

SeedLike = Union[int, np.random.Generator]


class ConvergenceError(ValueError):
    pass


def _rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def one_minus_theta(delta: float) -> float:
    """``e**delta / (1+delta)**(1+delta)``, the per-unit-mean tail factor."""
    if delta <= 0:
        raise ConvergenceError("delta must be > 0")
    return math.exp(delta - (1 + delta) * math.log1p(delta))


def chernoff_bound(m: int, q: float, delta: float) -> float:
    """Upper bound on ``P[Binom(m, q) >= (1+delta) m q]``.

    Values below the smallest positive float are returned as that float,
    which is still an upper bound.
    """
    if m < 0 or not 0 <= q <= 1:
        raise ConvergenceError("need m >= 0 and 0 <= q <= 1")
    if delta <= 0:
        raise ConvergenceError("delta must be > 0")
    log_b = m * q * (delta - (1 + delta) * math.log1p(delta))
    return max(math.exp(log_b), math.ulp(0.0))


def batches(k: int, n: int) -> list[range]:
    if not 0 <= k <= n:
        raise ConvergenceError("batch level must lie in [0, n]")
    size = 1 << k
    return [range(j * size, (j + 1) * size) for j in range(1 << (n - k))]


def _flags(flags) -> tuple[np.ndarray, int]:
    f = np.asarray(flags, dtype=bool)
    N = f.shape[-1]
    if N & (N - 1) or N == 0:
        raise ConvergenceError("flag vector length must be a power of two")
    return f, N.bit_length() - 1


def homogenization_success(flags, level: int, delta: float, b_max: float) -> bool:
    f, n = _flags(flags)
    if not 0 <= level <= n:
        raise ConvergenceError("level must lie in [0, n]")
    cap = (1 + delta) * b_max * (1 << level)
    return bool((f.reshape(-1, 1 << level).sum(axis=1) <= cap).all())


def homogenization_bound(n: int, level: int, delta: float, b_max: float) -> float:
    """Union bound ``2**(n-ell) (1-theta)**(b_max 2**ell)`` on homogenization failure."""
    return 2.0 ** (n - level) * one_minus_theta(delta) ** (b_max * 2.0 ** level)


def star_holds(r: int, delta: float, b_max: float) -> bool:
    """Level-offset condition: ``ln 2 - b_max |ln(1-theta)| 2**r < -1``."""
    return math.log(2) - b_max * abs(math.log(one_minus_theta(delta))) * 2.0 ** r < -1


def smallest_r(delta: float, b_max: float) -> int:
    r = 0
    while not star_holds(r, delta, b_max):
        r += 1
    return r


def c_lower_bound(tau0: float) -> float:
    """``C`` must exceed this for the reproduction bound to vanish."""
    return max(math.log(2) / tau0, math.log(2) / (2 * math.log(2) - 1))


def sample_prefixes(rng: np.random.Generator, n: int, k: int, m: int) -> np.ndarray:
    """``(2**n, m)`` array: row ``i`` is a uniform ``m``-subset of ``i``'s level-``k`` peers."""
    N, size = 1 << n, 1 << k
    keys = rng.random((N, size))
    local = np.argpartition(keys, m - 1, axis=1)[:, :m] if m < size else np.tile(np.arange(size), (N, 1))
    base = ((np.arange(N) >> k) ^ 1) << k
    return local + base[:, None]


def reproduction_success(flags, seed: SeedLike, C: float, start_level: int) -> bool:
    f, n = _flags(flags)
    m = math.ceil(C * n)
    if m < 1:
        raise ConvergenceError("C * n must be positive")
    if not 0 <= start_level <= n:
        raise ConvergenceError("start level must lie in [0, n]")
    if start_level < n and m > 1 << start_level:
        raise ConvergenceError(
            f"prefix length {m} exceeds the level-{start_level} peer set size {1 << start_level}"
        )
    rng = _rng(seed)
    honest = ~f
    N = 1 << n
    for k in range(start_level, n):
        prefix = sample_prefixes(rng, n, k, m)
        reaches_honest = honest[prefix].any(axis=1)
        load = np.bincount(prefix.ravel(), minlength=N)
        if not (reaches_honest[honest].all() and (load[honest] <= 2 * m).all()):
            return False
    return True


def reproduction_bound(n: int, tau0: float, C: float) -> float:
    return n * 2.0 ** n * (math.exp(-tau0 * C * n) + (math.e / 4) ** (C * n))


def theorem_bound(n: int, tau0: float, C: float) -> float:
    return math.exp(-n) + reproduction_bound(n, tau0, C)


@dataclass(frozen=True)
class ConvergenceParams:
    """Unset ``delta``, ``C`` and ``r`` are derived from ``b_max`` and ``tau``:
    the largest admissible ``delta``, ``C`` one percent above its lower bound,
    and the smallest ``r`` meeting the level-offset condition."""

    n: int
    b: float
    b_max: float = 0.25
    tau: float = 0.5
    delta: Optional[float] = None
    C: Optional[float] = None
    r: Optional[int] = None
    trials: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConvergenceError("n: exponent must be >= 1")
        if not 0 < self.b_max < 1:
            raise ConvergenceError("b_max: must lie in (0, 1)")
        if not 0 <= self.b <= self.b_max:
            raise ConvergenceError("b: must lie in [0, b_max]")
        if not 0 < self.tau < 1 - self.b_max:
            raise ConvergenceError("tau: must lie in (0, 1 - b_max)")
        if self.delta is None:
            object.__setattr__(self, "delta", (1 - self.tau) / self.b_max - 1)
        if self.delta <= 0 or self.tau > 1 - (1 + self.delta) * self.b_max + 1e-12:
            raise ConvergenceError("delta: need delta > 0 and tau <= 1 - (1+delta) b_max")
        if self.C is None:
            object.__setattr__(self, "C", 1.01 * c_lower_bound(self.tau0))
        if self.C <= 0:
            raise ConvergenceError("C: must be positive")
        if self.r is None:
            object.__setattr__(self, "r", smallest_r(self.delta, self.b_max))
        if self.r < 0:
            raise ConvergenceError("r: must be >= 0")
        if self.ell > self.n:
            raise ConvergenceError(
                f"r: start level {self.ell} exceeds n={self.n}; increase n or lower r"
            )
        if self.trials < 1:
            raise ConvergenceError("trials: must be >= 1")

    @property
    def N(self) -> int:
        return 1 << self.n

    @property
    def tau0(self) -> float:
        return 1 - (1 + self.delta) * self.b_max

    @property
    def ell(self) -> int:
        return math.ceil(math.log2(self.n)) + self.r

    @property
    def prefix(self) -> int:
        return math.ceil(self.C * self.n)

    @property
    def analytic_bound(self) -> float:
        """Failure-probability bound (homogenization + reproduction); may exceed 1."""
        return theorem_bound(self.n, self.tau0, self.C)


@dataclass(frozen=True)
class Estimate:
    successes: int
    trials: int
    ci_low: float
    ci_high: float

    @property
    def rate(self) -> float:
        return self.successes / self.trials


def wilson(successes: int, trials: int, level: float = 0.95) -> Estimate:
    ci = binomtest(successes, trials).proportion_ci(confidence_level=level, method="wilson")
    return Estimate(successes, trials, float(ci.low), float(ci.high))


def trial_rngs(seed: int, trials: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(trials)]


def theorem_trial(params: ConvergenceParams, rng: np.random.Generator) -> bool:
    flags = rng.random(params.N) < params.b
    if not homogenization_success(flags, params.ell, params.delta, params.b_max):
        return False
    return reproduction_success(flags, rng, params.C, params.ell)


def estimate_theorem_probability(params: ConvergenceParams) -> Estimate:
    """Fraction of trials in which both phases succeed, with a 95% Wilson interval."""
    wins = sum(theorem_trial(params, g) for g in trial_rngs(params.seed, params.trials))
    return wilson(wins, params.trials)


def homogenization_failure_rate(
    n: int, b: float, b_max: float, delta: float, level: int, trials: int, seed: int = 0
) -> float:
    rng = np.random.default_rng(seed)
    fails = 0
    chunk = max(1, (1 << 22) >> n)
    cap = (1 + delta) * b_max * (1 << level)
    done = 0
    while done < trials:
        t = min(chunk, trials - done)
        flags = rng.random((t, 1 << n)) < b
        counts = flags.reshape(t, -1, 1 << level).sum(axis=2)
        fails += int((counts > cap).any(axis=1).sum())
        done += t
    return fails / trials


def binomial_tail_rate(m: int, q: float, delta: float, samples: int, seed: int = 0) -> float:
    """Empirical ``P[Binom(m, q) >= (1+delta) m q]``."""
    x = np.random.default_rng(seed).binomial(m, q, size=samples)
    return float((x >= (1 + delta) * m * q).mean())


CSV_COLUMNS = (
    "n", "b", "b_max", "tau", "delta", "C", "r", "trials",
    "success_rate", "ci_low", "ci_high", "analytic_bound",
)


def csv_row(params: ConvergenceParams, est: Estimate) -> list[str]:
    return [
        str(params.n), f"{params.b:g}", f"{params.b_max:g}", f"{params.tau:g}",
        f"{params.delta:.6f}", f"{params.C:.6f}", str(params.r), str(params.trials),
        f"{est.rate:.6f}", f"{est.ci_low:.6f}", f"{est.ci_high:.6f}",
        f"{params.analytic_bound:.6g}",
    ]
