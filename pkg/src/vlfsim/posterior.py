"""Log-domain posterior over messages, log-odds, and exact one-step drift functionals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from vlfsim.channel import Dmc

LN2 = math.log(2.0)
MAX_ENUM_OUTPUTS = 64


class DesyncError(RuntimeError):
    """An observation had zero probability under the decoder's model."""


def logsumexp(a) -> float:
    """``ln sum exp(a)`` for a 1-D array; ``-inf`` when empty or all ``-inf``."""
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return -math.inf
    m = a.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + math.log(np.exp(a - m).sum()))


def log1mexp(a):
    """``ln(1 - exp(a))`` for ``a <= 0``, accurate on both sides of ``-ln 2``."""
    a = np.asarray(a, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.where(a < -LN2, np.log1p(-np.exp(a)), np.log(-np.expm1(a)))


@dataclass
class PosteriorState:
    log_post: np.ndarray
    n: int = 0

    @property
    def M(self) -> int:
        return self.log_post.shape[0]

    def probs(self) -> np.ndarray:
        return np.exp(self.log_post)

    def top(self) -> int:
        """Most likely message; ties go to the lowest index."""
        return int(np.argmax(self.log_post))

    def log_complement(self, j: int) -> float:
        """``ln P(W != j | Y^n)`` summed over the other messages, not via ``1 - p_j``."""
        others = np.delete(self.log_post, j)
        return float(logsumexp(others)) if others.size else -math.inf

    def z(self, j: int) -> float:
        lp = float(self.log_post[j])
        if lp < -LN2:
            return lp - float(log1mexp(lp))
        return lp - self.log_complement(j)

    def z_all(self) -> np.ndarray:
        lp = self.log_post
        with np.errstate(divide="ignore", invalid="ignore"):
            out = lp - log1mexp(np.minimum(lp, 0.0))
        j = self.top()
        if lp[j] >= -LN2:
            out[j] = self.z(j)
        return out


@dataclass(frozen=True)
class EncoderMap:
    """``assignment[j]`` is the input symbol sent when message j is true."""

    assignment: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    @classmethod
    def binary(cls, M: int, j0: int, x0: int, x0_prime: int) -> "EncoderMap":
        a = np.full(M, x0_prime, dtype=np.int64)
        a[j0] = x0
        return cls(a)

    @classmethod
    def constant(cls, M: int, x: int = 0) -> "EncoderMap":
        return cls(np.full(M, x, dtype=np.int64))

    def input_law(self, probs: np.ndarray, input_size: int) -> np.ndarray:
        """Posterior mass routed to each input symbol."""
        return np.bincount(self.assignment, weights=probs, minlength=input_size)


def init_uniform(M: int) -> PosteriorState:
    if M < 2:
        raise ValueError(f"need at least 2 messages, got {M}")
    return PosteriorState(np.full(M, -math.log(M)), 0)


def _log_kernel(dmc: Dmc) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(dmc.kernel)


def _updated(log_post: np.ndarray, loglik: np.ndarray) -> tuple[np.ndarray, float]:
    w = log_post + loglik
    log_py = float(logsumexp(w))
    if not math.isfinite(log_py):
        raise DesyncError("observation has zero probability under the current posterior")
    return w - log_py, log_py


def bayes_update(state: PosteriorState, enc: EncoderMap, dmc: Dmc, y: int) -> PosteriorState:
    if not 0 <= y < dmc.output_size:
        raise ValueError(f"output symbol {y} outside alphabet of size {dmc.output_size}")
    loglik = _log_kernel(dmc)[enc.assignment, y]
    new, _ = _updated(state.log_post, loglik)
    return PosteriorState(new, state.n + 1)


def entropy(state: PosteriorState) -> float:
    lp = state.log_post
    p = np.exp(lp)
    mask = p > 0
    return float(-np.sum(p[mask] * lp[mask]))


def log_entropy(state: PosteriorState) -> float:
    """``ln H(W | Y^n)``, kept accurate when the posterior is within e^-700 of a point mass."""
    lp = state.log_post
    j = state.top()
    finite = np.isfinite(lp)
    finite[j] = False
    # -p ln p for the non-top messages, in log form
    terms = list(lp[finite] + np.log(-lp[finite]))
    log_d = state.log_complement(j)
    if math.isfinite(log_d):
        d = math.exp(log_d)
        # top message contributes -(1-d) ln(1-d) = d * (1 + O(d))
        factor = 1.0 if d < 1e-12 else -(1.0 - d) * math.log1p(-d) / d
        if factor > 0:
            terms.append(log_d + math.log(factor))
    return float(logsumexp(terms)) if terms else -math.inf


def _check_outputs(dmc: Dmc) -> None:
    if dmc.output_size > MAX_ENUM_OUTPUTS:
        raise ValueError(f"exact drift enumeration limited to |Y| <= {MAX_ENUM_OUTPUTS}")


def _branches(state: PosteriorState, enc: EncoderMap, dmc: Dmc):
    """(p(y), updated log-posterior) for every output with p(y) > 0."""
    _check_outputs(dmc)
    logk = _log_kernel(dmc)
    for y in range(dmc.output_size):
        w = state.log_post + logk[enc.assignment, y]
        log_py = float(logsumexp(w))
        if math.isfinite(log_py):
            yield y, math.exp(log_py), PosteriorState(w - log_py, state.n + 1)


def exact_entropy_drift(state: PosteriorState, enc: EncoderMap, dmc: Dmc) -> float:
    """``E[H(W|Y^n) - H(W|Y^{n+1}) | Y^n]`` by enumerating the next output."""
    h = entropy(state)
    return sum(p * (h - entropy(s)) for _, p, s in _branches(state, enc, dmc))


def log_entropy_increments(state: PosteriorState, enc: EncoderMap, dmc: Dmc) -> list[tuple[float, float]]:
    """``(p(y), ln H(now) - ln H(after y))`` pairs."""
    lh = log_entropy(state)
    if not math.isfinite(lh):
        raise ValueError("log-entropy drift undefined at zero entropy")
    return [(p, lh - log_entropy(s)) for _, p, s in _branches(state, enc, dmc)]


def exact_log_entropy_drift(state: PosteriorState, enc: EncoderMap, dmc: Dmc) -> float:
    return sum(p * d for p, d in log_entropy_increments(state, enc, dmc))


def truncated_log_entropy_drift(state: PosteriorState, enc: EncoderMap, dmc: Dmc, theta: float) -> float:
    """Expected log-entropy drop counting only drops of at least ``theta``."""
    return sum(p * d for p, d in log_entropy_increments(state, enc, dmc) if d >= theta)


def exact_z_drift(
    state: PosteriorState, enc: EncoderMap, dmc: Dmc, j: int, true_message: int | None = None
) -> float:
    """``E[Z_j(n+1) - Z_j(n)]``.

    With ``true_message=None`` the next output is drawn from the decoder's
    predictive law; otherwise from ``P(.|enc(true_message))``.
    """
    zj = state.z(j)
    if not math.isfinite(zj):
        raise ValueError(f"Z_{j} is not finite")
    if true_message is None:
        return sum(p * (s.z(j) - zj) for _, p, s in _branches(state, enc, dmc))
    row = dmc.kernel[enc.assignment[true_message]]
    return sum(row[y] * (s.z(j) - zj) for y, _, s in _branches(state, enc, dmc) if row[y] > 0)


def expected_partition_z_drift(
    state: PosteriorState, px: np.ndarray, dmc: Dmc, j: int, true_message: int | None = None
) -> float:
    """Z_j drift averaged over every independent random partition with law ``px``.

    Exhaustive over ``|X|^M`` maps, so only for small message sets.
    """
    M = state.M
    nx = len(px)
    if nx**M > 1 << 16:
        raise ValueError("too many partitions to enumerate")
    total = 0.0
    for code in range(nx**M):
        a = np.array([(code // nx**k) % nx for k in range(M)])
        weight = float(np.prod(np.asarray(px)[a]))
        if weight == 0.0:
            continue
        total += weight * exact_z_drift(state, EncoderMap(a), dmc, j, true_message)
    return total
