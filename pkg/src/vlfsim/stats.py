"""Interval estimates used by the campaign summaries and the martingale lab."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

Z95 = float(norm.ppf(0.975))


@dataclass(frozen=True)
class Interval:
    estimate: float
    low: float
    high: float

    @property
    def half_width(self) -> float:
        return 0.5 * (self.high - self.low)

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high


def wilson(successes: int, trials: int, z: float = Z95) -> Interval:
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if not 0 <= successes <= trials:
        raise ValueError(f"successes={successes} outside [0, {trials}]")
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    centre = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    # exact endpoints at the extremes; the closed form misses them by rounding
    low = 0.0 if successes == 0 else max(0.0, min(p, centre - half))
    high = 1.0 if successes == trials else min(1.0, max(p, centre + half))
    return Interval(p, low, high)


def rule_of_three(trials: int) -> float:
    """One-sided 95% upper bound on a rate after zero events."""
    return 3.0 / trials


def proportion(successes: int, trials: int) -> Interval:
    """Normal interval, falling back to Wilson when either count is under 50."""
    if min(successes, trials - successes) < 50:
        return wilson(successes, trials)
    p = successes / trials
    half = Z95 * math.sqrt(p * (1 - p) / trials)
    return Interval(p, p - half, p + half)


def mean_interval(x) -> Interval:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return Interval(math.nan, math.nan, math.nan)
    m = float(x.mean())
    half = Z95 * float(x.std(ddof=1)) / math.sqrt(x.size) if x.size > 1 else math.inf
    return Interval(m, m - half, m + half)


def log_mean_interval(log_x) -> Interval:
    """Interval for ``ln E[X]`` from samples of ``ln X``, without leaving the log domain.

    Uses the delta method on the mean of ``X / max X``; the returned bounds are
    logs, and the lower bound is ``-inf`` when the normal interval reaches 0.
    """
    lx = np.asarray(log_x, dtype=np.float64)
    n = lx.size
    if n == 0 or not np.isfinite(lx).any():
        return Interval(-math.inf, -math.inf, -math.inf)
    top = float(lx.max())
    scaled = np.exp(lx - top)
    m = float(scaled.mean())
    half = Z95 * float(scaled.std(ddof=1)) / math.sqrt(n) if n > 1 else m
    est = float(logsumexp(lx)) - math.log(n)
    low = top + math.log(m - half) if m - half > 0 else -math.inf
    return Interval(est, low, top + math.log(m + half))
