"""
Statistics Module
Seeded generators, percentile bootstrap intervals, permutation tests and
Cohen's d for the experiment reports.

Permutation tests enumerate every split (or sign pattern) when there are at
most EXHAUSTIVE_LIMIT of them and fall back to Monte Carlo with the add-one
estimator otherwise.
"""
import itertools
import logging
import math
import zlib
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence

import numpy as np
from scipy import stats as sps

from sceneguard.errors import ContractError, UndefinedEffectError

logger = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 20000
BATCH_SIZE = 1000


def stable_hash(key: str) -> int:
    return zlib.crc32(key.encode("utf-8"))


def make_rng(seed: int, key: Optional[str] = None) -> np.random.Generator:
    """Generator for (seed, key); distinct keys give independent streams"""
    if key is None:
        return np.random.default_rng(seed)
    return np.random.default_rng([seed, stable_hash(key)])


def _finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None or not np.isfinite(value):
        return None
    return float(value)


@dataclass(frozen=True)
class BootstrapCI:
    point: float
    lo: float
    hi: float
    level: float = 0.95
    iterations: int = 10000

    def to_dict(self) -> Dict[str, Any]:
        return {'point': self.point, 'lo': self.lo, 'hi': self.hi,
                'level': self.level, 'iterations': self.iterations}


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    iterations: int
    cohens_d: float
    exhaustive: bool = False
    p_value_normal: Optional[float] = None

    __test__ = False  # not a pytest class

    def to_dict(self) -> Dict[str, Any]:
        return {
            'statistic': self.statistic,
            'p_value': self.p_value,
            'p_value_method': 'exhaustive' if self.exhaustive else 'monte_carlo_add_one',
            'p_value_normal': _finite_or_none(self.p_value_normal),
            'iterations': self.iterations,
            'cohens_d': _finite_or_none(self.cohens_d),
        }


def bootstrap_ci(data: Sequence[float], level: float = 0.95, iterations: int = 10000,
                 rng: Optional[np.random.Generator] = None) -> BootstrapCI:
    """
    Percentile bootstrap interval for the mean

    Args:
        data: Sample, at least two values
        level: Coverage in (0, 1)
        iterations: Number of resamples
        rng: Seeded generator

    Returns:
        BootstrapCI with lo <= point <= hi
    """
    data = np.asarray(data, dtype=np.float64)
    if data.size < 2:
        raise ContractError(f"bootstrap_ci needs >= 2 values, got {data.size}")
    if not 0 < level < 1:
        raise ContractError(f"level must lie in (0, 1), got {level}")
    if iterations < 1:
        raise ContractError("iterations must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()

    means = np.empty(iterations)
    for start in range(0, iterations, BATCH_SIZE):
        stop = min(start + BATCH_SIZE, iterations)
        idx = rng.integers(0, data.size, size=(stop - start, data.size))
        means[start:stop] = data[idx].mean(axis=1)

    point = float(data.mean())
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [tail, 1.0 - tail])
    return BootstrapCI(point, min(float(lo), point), max(float(hi), point), level, iterations)


def cohens_d(group_a: Sequence[float], group_b: Sequence[float]) -> float:
    """(mean_a - mean_b) over the pooled sample standard deviation"""
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ContractError("cohens_d needs >= 2 values per group")
    pooled = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / (a.size + b.size - 2)
    if pooled <= 0:
        raise UndefinedEffectError("Pooled variance is zero; Cohen's d is undefined")
    return float((a.mean() - b.mean()) / np.sqrt(pooled))


def _effect_or_nan(a: np.ndarray, b: np.ndarray) -> float:
    try:
        return cohens_d(a, b)
    except (UndefinedEffectError, ContractError):
        return float("nan")


def _count_extreme(stats: np.ndarray, observed: float) -> int:
    tol = 1e-12 * max(1.0, abs(observed))
    return int(np.sum(np.abs(stats) >= abs(observed) - tol))


def permutation_test(group_a: Sequence[float], group_b: Sequence[float], iterations: int = 10000,
                     rng: Optional[np.random.Generator] = None,
                     exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> TestResult:
    """
    Two-sided permutation test on the difference of means

    Args:
        group_a: First sample
        group_b: Second sample
        iterations: Monte Carlo shuffles when enumeration is too large
        rng: Seeded generator for the Monte Carlo branch
        exhaustive_limit: Enumerate all splits when there are at most this many

    Returns:
        TestResult; statistic is mean(a) - mean(b)
    """
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ContractError("permutation_test needs non-empty groups")
    rng = rng if rng is not None else np.random.default_rng()

    pooled = np.concatenate([a, b])
    n, n_a = pooled.size, a.size
    observed = float(a.mean() - b.mean())
    total = pooled.sum()

    n_splits = math.comb(n, n_a)
    if n_splits <= exhaustive_limit:
        sums_a = np.array([pooled[list(c)].sum() for c in itertools.combinations(range(n), n_a)])
        diffs = sums_a / n_a - (total - sums_a) / (n - n_a)
        p_value = _count_extreme(diffs, observed) / n_splits
        used, exhaustive = n_splits, True
    else:
        count = 0
        for start in range(0, iterations, BATCH_SIZE):
            batch = min(BATCH_SIZE, iterations - start)
            shuffled = rng.permuted(np.broadcast_to(pooled, (batch, n)), axis=1)
            sums_a = shuffled[:, :n_a].sum(axis=1)
            count += _count_extreme(sums_a / n_a - (total - sums_a) / (n - n_a), observed)
        p_value = (1 + count) / (1 + iterations)
        used, exhaustive = iterations, False

    p_normal = None
    if a.size >= 2 and b.size >= 2:
        p_normal = float(sps.ttest_ind(a, b, equal_var=False).pvalue)

    return TestResult(observed, float(p_value), used, _effect_or_nan(a, b), exhaustive, p_normal)


def permutation_test_paired(deltas: Sequence[float], iterations: int = 10000,
                            rng: Optional[np.random.Generator] = None,
                            exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> TestResult:
    """Sign-flip permutation test on the mean of paired differences"""
    d = np.asarray(deltas, dtype=np.float64)
    if d.size == 0:
        raise ContractError("permutation_test_paired needs at least one delta")
    rng = rng if rng is not None else np.random.default_rng()

    n = d.size
    observed = float(d.mean())

    if 2 ** n <= exhaustive_limit:
        patterns = np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]
        signs = 1.0 - 2.0 * (patterns & 1)
        p_value = _count_extreme(signs @ d / n, observed) / 2 ** n
        used, exhaustive = 2 ** n, True
    else:
        count = 0
        for start in range(0, iterations, BATCH_SIZE):
            batch = min(BATCH_SIZE, iterations - start)
            signs = rng.choice(np.array([-1.0, 1.0]), size=(batch, n))
            count += _count_extreme(signs @ d / n, observed)
        p_value = (1 + count) / (1 + iterations)
        used, exhaustive = iterations, False

    sd = d.std(ddof=1) if n >= 2 else 0.0
    effect = observed / sd if sd > 0 else float("nan")
    p_normal = float(sps.ttest_1samp(d, 0.0).pvalue) if n >= 2 and sd > 0 else None

    return TestResult(observed, float(min(p_value, 1.0)), used, effect, exhaustive, p_normal)
