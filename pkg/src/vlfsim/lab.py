"""Drift walks for the stopping-time bounds, the retransmission-schedule audit,
the converse root equation, and the Fano consistency check."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from vlfsim import rng as crn
from vlfsim.channel import ChannelInfo
from vlfsim.stats import Interval, Z95

SINGLE_UP = "single-up"
UP_THEN_DOWN = "up-then-down"
UP_THEN_UP = "up-then-up"
TWO_POINT = "two-point"
UNIFORM = "uniform"
STEP_GUARD = 10_000_000


class WalkError(ValueError):
    pass


@dataclass(frozen=True)
class DriftWalkSpec:
    """A walk whose conditional drift is K1 in the first regime and +-K2 in the second.

    ``single-up``: drift K1 while the walk is below 0 and K2 at or above 0; stop
    at the first n with ``xi_n >= T``. ``up-then-down``: drift K1 until
    ``xi >= T0`` (time tau0), then -K2; stop once ``xi <= T`` after tau0.
    ``up-then-up``: drift K1 until tau0, then +K2; stop at ``xi >= T``.
    Every step lies in ``[-K3, K3]``.
    """

    K1: float
    K2: float
    K3: float
    T: float
    T0: float = 0.0
    xi0: float = 0.0
    two_regime: str = SINGLE_UP
    step_law: str = TWO_POINT

    def __post_init__(self):
        if min(self.K1, self.K2, self.K3) <= 0:
            raise WalkError("K1, K2, K3 must be positive")
        if max(self.K1, self.K2) > self.K3:
            raise WalkError("a drift larger than the step bound K3 cannot be realized")
        if self.two_regime not in (SINGLE_UP, UP_THEN_DOWN, UP_THEN_UP):
            raise WalkError(f"unknown regime {self.two_regime!r}")
        if self.step_law not in (TWO_POINT, UNIFORM):
            raise WalkError(f"unknown step law {self.step_law!r}")
        if self.two_regime == UP_THEN_DOWN and self.T > self.T0:
            raise WalkError("up-then-down needs T <= T0")
        if self.two_regime == UP_THEN_UP and self.T < self.T0:
            raise WalkError("up-then-up needs T >= T0")

    def bound(self) -> float:
        """Right-hand side of the matching stopping-time bound.

        For ``single-up`` the unknown additive constant is omitted, so this is
        the leading term only.
        """
        if self.two_regime == SINGLE_UP:
            x = self.xi0
            lead = abs(self.T) / self.K2
            return lead - (x / self.K1 if x < 0 else x / self.K2)
        return (abs(self.T0 - self.T) + 3.0 * self.K3) / self.K2


def step(drift, u, K3: float, law: str):
    """Steps with mean ``drift`` and support in ``[-K3, K3]`` from uniforms ``u``."""
    drift = np.asarray(drift, dtype=np.float64)
    if law == TWO_POINT:
        up = u < 0.5 * (1.0 + drift / K3)
        return np.where(up, K3, -K3)
    w = K3 - np.abs(drift)
    return drift + w * (2.0 * u - 1.0)


@dataclass(frozen=True)
class WalkResult:
    mean_tau: float
    ci95: float
    bound: float
    trials: int
    guarded: int

    def as_dict(self) -> dict:
        return asdict(self)


def simulate_stopping(spec: DriftWalkSpec, trials: int, seed: int, guard: int = STEP_GUARD) -> WalkResult:
    """Monte Carlo mean of tau (``tau - tau0`` in the two-regime modes) with a 95% half-width.

    Walks still running after ``guard`` steps are dropped and counted.
    """
    if trials < 1:
        raise WalkError("trials must be positive")
    idx = np.arange(trials, dtype=np.uint64)
    xi = np.full(trials, float(spec.xi0))
    switched = np.zeros(trials, bool)
    start = np.zeros(trials, np.int64)
    tau = np.full(trials, -1, np.int64)
    two = spec.two_regime != SINGLE_UP

    def settle(n, live):
        """Mark regime switches and stops at time n; return the still-live mask."""
        if two:
            new = ~switched[live] & (xi[live] >= spec.T0)
            if new.any():
                ids = live[new]
                switched[ids] = True
                start[ids] = n
            sw = switched[live]
            if spec.two_regime == UP_THEN_DOWN:
                stop = sw & (xi[live] <= spec.T)
            else:
                stop = sw & (xi[live] >= spec.T)
        else:
            stop = xi[live] >= spec.T
        tau[live[stop]] = n - start[live[stop]]
        return live[~stop]

    live = settle(0, np.arange(trials))
    n = 0
    while live.size and n < guard:
        x = xi[live]
        if spec.two_regime == SINGLE_UP:
            d = np.where(x < 0, spec.K1, spec.K2)
        else:
            k2 = -spec.K2 if spec.two_regime == UP_THEN_DOWN else spec.K2
            d = np.where(switched[live], k2, spec.K1)
        u = crn.uniforms(seed, crn.STREAM_WALK, idx[live], n)
        xi[live] = x + step(d, u, spec.K3, spec.step_law)
        n += 1
        live = settle(n, live)
    done = tau[tau >= 0].astype(np.float64)
    if done.size == 0:
        raise WalkError("every walk hit the step guard")
    half = Z95 * float(done.std(ddof=1)) / math.sqrt(done.size) if done.size > 1 else math.inf
    return WalkResult(float(done.mean()), half, spec.bound(), trials, int(live.size))


# ---------------------------------------------------------------------------
# retransmission schedule audit


@dataclass(frozen=True)
class SchemeAudit:
    L: float
    rho_prime: float
    p0L: float
    Z0L: float
    AL: float
    log_eps: float
    p1L_bound: float
    EWL: float
    EWL_bound: float
    ratio: float
    below_threshold: bool

    @property
    def epsL(self) -> float:
        return math.exp(-self.log_eps) if self.log_eps > -700 else math.inf

    @property
    def holds(self) -> bool:
        return not self.below_threshold and self.EWL <= self.EWL_bound

    def as_dict(self) -> dict:
        out = asdict(self)
        out.update(epsL=self.epsL, holds=self.holds)
        return out


def power_family(s: float) -> Callable[[float], float]:
    return lambda L: L ** (-s)


def audit_schedule(
    info: ChannelInfo, C: float, L: float, const_q: float = 0.0, rho_prime: Callable[[float], float] | None = None
) -> SchemeAudit:
    """Evaluate the retransmission schedule at design length L and bound ``E(W_L)``.

    ``p1`` is taken at its upper bound, which makes ``E(W_L)`` the largest
    value the expectation identity allows. Points where that bound interval is
    empty, ``eps`` is not in (0, 1), or ``C <= rho'`` are flagged as below
    threshold rather than failed.
    """
    if not info.finite_B:
        raise ValueError("audit needs a channel with finite B")
    if L < 10:
        raise ValueError("audit needs L >= 10")
    rho_prime = rho_prime or power_family(1.0 / 3.0)
    rp = float(rho_prime(L))
    B, Bs, C2 = info.B, info.B_star, info.C2
    p0 = 1.0 - 1.0 / L
    z0 = math.log(L - 1.0)
    A = z0 / 2.0
    inner = -L * rp / C + (1.0 / C - p0 / B + 3.0 * (1.0 - p0) / (2.0 * Bs)) * z0 + const_q
    log_eps = -(B / p0) * inner
    eps = math.exp(-log_eps) if log_eps > -700 else math.inf
    num = math.exp(-z0) - eps * math.exp(-C2)
    den = math.exp(-A) - eps * math.exp(-C2)
    x = L * (C - rp)
    below = not (log_eps > 0 and num >= 0 and den > 0 and x > 0)
    p1 = num / den if not below else math.nan
    ewl = math.nan
    if not below:
        log_m1 = x + math.log1p(-math.exp(-x))  # ln(e^x - 1)
        rhs = (
            p0 * log_eps / B
            + log_m1 / C
            + (1.0 / C - p0 / B + (1.0 - p0) / Bs) * z0
            + (1.0 - p0) * abs(A) / Bs
            + const_q
        )
        ewl = rhs / (p0 * (1.0 - p1))
    return SchemeAudit(
        L=float(L), rho_prime=rp, p0L=p0, Z0L=z0, AL=A, log_eps=log_eps, p1L_bound=p1,
        EWL=ewl, EWL_bound=L + 3.0 * math.sqrt(L), ratio=log_eps / (L * rp), below_threshold=below,
    )


# ---------------------------------------------------------------------------
# converse root equation


class NoRoots(ValueError):
    pass


@dataclass(frozen=True)
class Roots:
    a: float
    A: float
    ratio: float
    residual: float


def root_gap(B: float, C: float, b: float, x):
    """``x/C - ln(x)/B - b``; negative strictly between the two roots."""
    return np.asarray(x) / C - np.log(x) / B - b


def critical_b(B: float, C: float) -> float:
    """Smallest b for which the root equation has a solution (tangency at x = C/B)."""
    return (1.0 - math.log(C / B)) / B


def converse_roots(B: float, C: float, b: float) -> Roots:
    """Both positive roots ``a <= A`` of ``x/C = ln(x)/B + b``.

    Solved in ``t = ln x`` so that tiny lower roots do not underflow.
    """
    if not (B > 0 and C > 0 and math.isfinite(B)):
        raise NoRoots("B and C must be positive and finite")
    xc = C / B
    g = lambda t: math.exp(t) / C - t / B - b  # noqa: E731
    tc = math.log(xc)
    gmin = g(tc)
    if gmin > 0:
        raise NoRoots(f"b={b} below the critical value {critical_b(B, C):.12g}")
    if gmin == 0:
        return Roots(xc, xc, 1.0, 0.0)
    lo = tc - 1.0
    while g(lo) <= 0:
        lo = tc - 2.0 * (tc - lo)
    hi = tc + 1.0
    while g(hi) <= 0:
        hi = tc + 2.0 * (hi - tc)
    ta = brentq(g, lo, tc, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    tA = brentq(g, tc, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    a, A = math.exp(ta), math.exp(tA)
    resid = max(abs(float(root_gap(B, C, b, a))), abs(float(root_gap(B, C, b, A))))
    return Roots(a, A, A / a, resid)


# ---------------------------------------------------------------------------
# Fano consistency


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log(p) - (1.0 - p) * math.log1p(-p)


def fano_bound(pe: float, M: int) -> float:
    return binary_entropy(pe) + pe * math.log(M - 1)


def fano_check(mean_entropy: float, pe_hat: float, M: int, entropy_ci: float = 0.0, pe_ci: float = 0.0) -> bool:
    """True iff the mean stopping entropy is at most the Fano bound plus 3 combined half-widths.

    The bound's share of the half-width is its largest change over
    ``pe_hat +- pe_ci``.
    """
    if M < 2:
        raise ValueError("M must be at least 2")
    f = fano_bound(pe_hat, M)
    spread = max(abs(fano_bound(min(max(pe_hat + s, 0.0), 1.0), M) - f) for s in (-pe_ci, pe_ci))
    return mean_entropy <= f + 3.0 * (entropy_ci + spread)


def log_fano_bound(log_pe: float, M: int) -> float:
    """``ln(h(pe) + pe ln(M-1))`` for error rates far below double precision."""
    if log_pe == -math.inf:
        return -math.inf
    pe = math.exp(log_pe)
    if pe > 1e-8:
        return math.log(fano_bound(pe, M))
    # h(pe) = pe (1 - ln pe) + O(pe^2)
    return log_pe + math.log(1.0 - log_pe + math.log(M - 1))


def fano_check_log(log_entropy: Interval, log_pe: Interval, M: int) -> bool:
    """Fano check on log-domain estimates of the mean entropy and the error probability.

    Passes iff the entropy estimate is at most the bound at the upper end of
    the error interval, allowing 3 relative half-widths of entropy noise.
    """
    if log_entropy.estimate == -math.inf:
        return True
    rel = math.expm1(max(0.0, log_entropy.estimate - log_entropy.low)) if math.isfinite(log_entropy.low) else 1.0
    top = log_fano_bound(max(log_pe.estimate, log_pe.high), M)
    return log_entropy.estimate <= top + math.log1p(3.0 * rel)
