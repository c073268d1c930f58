import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlfsim.stats import Z95, Interval, log_mean_interval, mean_interval, proportion, rule_of_three, wilson


class TestWilson:
    def test_reference_interval(self):
        ci = wilson(100, 10_000)
        assert ci.low == pytest.approx(0.0082, abs=5e-5)
        assert ci.high == pytest.approx(0.0121, abs=5e-5)

    def test_zero_successes(self):
        ci = wilson(0, 1000)
        assert ci.low == 0.0 and 0 < ci.high < 0.005

    @given(n=st.integers(1, 10**6), frac=st.floats(0, 1))
    @settings(max_examples=100)
    def test_contains_point_estimate(self, n, frac):
        k = int(frac * n)
        ci = wilson(k, n)
        assert 0.0 <= ci.low <= ci.estimate <= ci.high <= 1.0

    def test_bad_counts(self):
        with pytest.raises(ValueError):
            wilson(5, 3)
        with pytest.raises(ValueError):
            wilson(0, 0)


class TestOtherIntervals:
    def test_rule_of_three(self):
        assert rule_of_three(100_000) == pytest.approx(3e-5)
        # exact one-sided bound solves (1-p)^n = 0.05
        assert rule_of_three(1000) == pytest.approx(1 - 0.05 ** (1 / 1000), rel=0.01)

    def test_proportion_normal_branch(self):
        ci = proportion(500, 1000)
        assert ci.half_width == pytest.approx(Z95 * math.sqrt(0.25 / 1000))

    def test_mean_interval(self):
        x = np.arange(10.0)
        ci = mean_interval(x)
        assert ci.estimate == 4.5
        assert ci.half_width == pytest.approx(Z95 * x.std(ddof=1) / math.sqrt(10))
        assert ci.contains(4.5) and not ci.contains(10)

    def test_log_mean_matches_direct(self):
        x = np.random.default_rng(0).exponential(size=5000)
        got = log_mean_interval(np.log(x))
        ref = mean_interval(x)
        assert got.estimate == pytest.approx(math.log(ref.estimate), rel=1e-12)
        assert got.low == pytest.approx(math.log(ref.low), rel=1e-12)
        assert got.high == pytest.approx(math.log(ref.high), rel=1e-12)

    def test_log_mean_far_below_double_range(self):
        lx = np.array([-2000.0, -2001.0, -2002.0])
        with mpmath.workdps(30):
            ref = mpmath.log(sum(mpmath.exp(v) for v in lx) / 3)
        got = log_mean_interval(lx)
        assert got.estimate == pytest.approx(float(ref), rel=1e-14)
        assert got.low <= got.estimate <= got.high

    def test_log_mean_all_zero(self):
        got = log_mean_interval([-math.inf, -math.inf])
        assert got == Interval(-math.inf, -math.inf, -math.inf)
