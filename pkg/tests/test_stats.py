"""
Tests for seeded generators, bootstrap intervals, permutation tests and Cohen's d
"""

import numpy as np
import pytest
from scipy import stats as sps

from sceneguard.errors import ContractError, UndefinedEffectError
from sceneguard.stats import (
    bootstrap_ci, cohens_d, make_rng, permutation_test, permutation_test_paired
)


class TestMakeRng:
    def test_same_key_same_stream(self):
        assert make_rng(1, "utt01").random() == make_rng(1, "utt01").random()

    def test_keys_give_different_streams(self):
        assert make_rng(1, "utt01").random() != make_rng(1, "utt02").random()
        assert make_rng(1, "utt01").random() != make_rng(2, "utt01").random()


class TestBootstrap:
    def test_constant_sample(self):
        ci = bootstrap_ci([0.4] * 10, iterations=500, rng=np.random.default_rng(0))
        assert ci.point == pytest.approx(0.4)
        assert ci.lo == pytest.approx(0.4)
        assert ci.hi == pytest.approx(0.4)

    def test_brackets_point(self):
        ci = bootstrap_ci([1.0, 2.0, 3.0, 10.0], iterations=500, rng=np.random.default_rng(0))
        assert ci.lo <= ci.point <= ci.hi
        assert ci.to_dict()["iterations"] == 500

    def test_deterministic(self):
        data = np.random.default_rng(3).normal(size=30)
        a = bootstrap_ci(data, iterations=2000, rng=np.random.default_rng(11))
        b = bootstrap_ci(data, iterations=2000, rng=np.random.default_rng(11))
        assert a == b

    def test_too_small(self):
        with pytest.raises(ContractError):
            bootstrap_ci([1.0])

    def test_width_shrinks_with_sample_size(self):
        rng = np.random.default_rng(5)
        small = bootstrap_ci(rng.normal(size=100), iterations=2000, rng=np.random.default_rng(1))
        large = bootstrap_ci(rng.normal(size=400), iterations=2000, rng=np.random.default_rng(1))
        assert (large.hi - large.lo) < 0.6 * (small.hi - small.lo)

    @pytest.mark.slow
    def test_coverage(self):
        rng = np.random.default_rng(2024)
        covered = 0
        for _ in range(1000):
            sample = rng.normal(0.0, 1.0, 100)
            ci = bootstrap_ci(sample, iterations=2000, rng=rng)
            covered += ci.lo <= 0.0 <= ci.hi
        assert 0.93 <= covered / 1000 <= 0.97


class TestCohensD:
    def test_unit_effect(self):
        assert cohens_d([0.0, 1.0, 2.0], [-1.0, 0.0, 1.0]) == pytest.approx(1.0, abs=1e-9)

    def test_antisymmetric(self):
        a, b = [0.2, 0.9, 1.4, 0.3], [1.0, 2.2, 1.7]
        assert cohens_d(a, b) == pytest.approx(-cohens_d(b, a))

    def test_identical_groups(self):
        assert cohens_d([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_zero_variance(self):
        with pytest.raises(UndefinedEffectError):
            cohens_d([1.0, 1.0], [1.0, 1.0])

    def test_too_small(self):
        with pytest.raises(ContractError):
            cohens_d([1.0], [1.0, 2.0])


class TestPermutationTest:
    def test_exhaustive_separated_groups(self):
        result = permutation_test([0.0] * 5, [10.0] * 5)
        assert result.exhaustive
        assert result.iterations == 252
        assert result.p_value == pytest.approx(2 / 252)
        assert result.statistic == pytest.approx(-10.0)
        assert result.to_dict()["cohens_d"] is None

    def test_identical_groups(self):
        result = permutation_test([1.0, 2.0, 3.0, 4.0, 5.0], [1.0, 2.0, 3.0, 4.0, 5.0])
        assert result.p_value == pytest.approx(1.0)
        assert result.to_dict()["p_value_method"] == "exhaustive"

    def test_monte_carlo_deterministic_and_positive(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(0, 1, 30), rng.normal(3, 1, 30)
        r1 = permutation_test(a, b, iterations=2000, rng=np.random.default_rng(7))
        r2 = permutation_test(a, b, iterations=2000, rng=np.random.default_rng(7))
        assert r1 == r2
        assert not r1.exhaustive
        assert r1.p_value == pytest.approx(1 / 2001)
        assert r1.p_value > 0
        assert r1.p_value_normal < 1e-6

    def test_monte_carlo_agrees_with_enumeration(self):
        a = [0.1, 0.5, 0.9, 1.3, 0.2, 0.7]
        b = [1.0, 1.4, 0.6, 1.8, 1.1, 1.6]
        exact = permutation_test(a, b)
        iterations = 10000
        sampled = permutation_test(a, b, iterations=iterations, rng=np.random.default_rng(3), exhaustive_limit=0)

        assert exact.exhaustive and not sampled.exhaustive
        sd = np.sqrt(exact.p_value * (1 - exact.p_value) / iterations)
        assert abs(sampled.p_value - exact.p_value) <= 3 * sd + 1 / (iterations + 1)

    @pytest.mark.slow
    def test_null_p_values_are_uniform(self):
        rng = np.random.default_rng(99)
        p_values = []
        for _ in range(500):
            a, b = rng.normal(size=10), rng.normal(size=10)
            p_values.append(permutation_test(a, b, iterations=1000, rng=rng).p_value)
        assert sps.kstest(p_values, "uniform").pvalue > 0.01

    def test_empty_group(self):
        with pytest.raises(ContractError):
            permutation_test([], [1.0])


class TestPairedPermutationTest:
    def test_all_zero_deltas(self):
        result = permutation_test_paired([0.0] * 6)
        assert result.p_value == 1.0
        assert result.to_dict()["cohens_d"] is None

    def test_consistent_shift(self):
        result = permutation_test_paired([1.0] * 8)
        assert result.exhaustive
        assert result.p_value == pytest.approx(2 / 256)

    def test_effect_is_mean_over_sd(self):
        deltas = [0.5, 1.0, 1.5, 2.0]
        result = permutation_test_paired(deltas)
        assert result.cohens_d == pytest.approx(np.mean(deltas) / np.std(deltas, ddof=1))
        assert result.p_value_normal == pytest.approx(sps.ttest_1samp(deltas, 0.0).pvalue)

    def test_monte_carlo_branch(self):
        deltas = np.random.default_rng(1).normal(-0.5, 1.0, 20)
        r1 = permutation_test_paired(deltas, iterations=3000, rng=np.random.default_rng(4))
        r2 = permutation_test_paired(deltas, iterations=3000, rng=np.random.default_rng(4))
        assert not r1.exhaustive
        assert r1.p_value == r2.p_value
        assert 0 < r1.p_value <= 1
