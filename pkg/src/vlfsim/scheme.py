"""Burnashev's two-phase variable-length feedback scheme.

Phase 1 randomly partitions the messages across the inputs following the
capacity-achieving law. Once some message's posterior reaches ``p0`` the
encoder answers a binary question (is that message the true one?) with the
extremal input pair ``(x0, x0')``. Case 1 (B* > C) switches between the two
modes according to the current posterior and stops when the leading log-odds
reach ``log_eps``. Case 2 (B* <= C) freezes the candidate at phase-2 entry and
restarts the whole transmission when its log-odds fall to ``A``.

Two implementations share the same common randomness: :func:`trace_trial`
walks one transmission with :class:`PosteriorState` objects and is the
readable reference; :func:`simulate_batch` advances many trials in lockstep
with array operations and is what campaigns use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from vlfsim import rng as crn
from vlfsim.channel import ChannelInfo, Dmc
from vlfsim.posterior import (
    LN2,
    DesyncError,
    EncoderMap,
    PosteriorState,
    bayes_update,
    init_uniform,
)

CASE1 = "case1"
CASE2 = "case2"
THEORY = "theory"
CALIBRATED = "calibrated"


class SchemeError(ValueError):
    pass


class NoP0Solution(SchemeError):
    pass


class ThresholdDegenerate(SchemeError):
    pass


class CalibrationError(SchemeError):
    pass


# ---------------------------------------------------------------------------
# parameter schedules


def psi(dmc: Dmc, info: ChannelInfo, u, v):
    """Expected log-odds drift of a message sent on x0' while another holds mass ``u`` on x0.

    ``v`` is the drifting message's own posterior. Evaluates
    ``sum_y P(y|x0') ln[P(y|x0')(1-v) / (P(y|x0')(1-v) + u (P(y|x0) - P(y|x0')))]``.
    """
    p0 = dmc.kernel[info.x0]
    p1 = dmc.kernel[info.x0_prime]
    u = np.asarray(u, dtype=np.float64)[..., None]
    v = np.asarray(v, dtype=np.float64)[..., None]
    mask = p1 > 0
    num = p1[mask] * (1.0 - v)
    den = num + u * (p0[mask] - p1[mask])
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = p1[mask] * np.log(num / den)
    return terms.sum(axis=-1)


def _root_in_v(dmc, info, C, u, n_grid=257, tol=1e-12):
    """Smallest v in [0, min(1-u, 1/2)] with psi(u, v) = C, or None."""
    vmax = min(1.0 - u, 0.5)
    vs = np.linspace(0.0, vmax, n_grid) if vmax > 0 else np.zeros(1)
    f = psi(dmc, info, u, vs) - C
    hit = np.flatnonzero(np.abs(f) <= tol)
    cross = np.flatnonzero(np.isfinite(f[:-1]) & np.isfinite(f[1:]) & (np.sign(f[:-1]) * np.sign(f[1:]) < 0))
    cands = []
    if hit.size:
        cands.append(float(vs[hit[0]]))
    if cross.size:
        lo, hi = float(vs[cross[0]]), float(vs[cross[0] + 1])
        flo = float(f[cross[0]])
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fm = float(psi(dmc, info, u, mid)) - C
            if fm == 0 or hi - lo < 1e-15:
                lo = hi = mid
                break
            if np.sign(fm) == np.sign(flo):
                lo, flo = mid, fm
            else:
                hi = mid
        cands.append(0.5 * (lo + hi))
    return min(cands) if cands else None


def solve_p0_pair(dmc: Dmc, info: ChannelInfo, C: float, step: float = 1e-4) -> tuple[float, float]:
    """Minimal ``u`` in [1/2, 1] for which ``psi(u, v) = C`` has a root in ``v``, with that root.

    When ``psi > C`` over the whole admissible region the drift requirement
    that ``p0`` exists to secure already holds at ``u = 1/2``; that point is
    returned with ``v = nan``. :class:`NoP0Solution` is raised otherwise.
    """
    if not info.finite_B:
        raise SchemeError("p0 needs a channel with finite B")
    if not info.B_star > C:
        raise SchemeError(f"p0 is defined for B* > C only (B*={info.B_star:.6g}, C={C:.6g})")
    grid = np.arange(0.5, 1.0 + step / 2, step)
    grid[-1] = min(grid[-1], 1.0)
    prev = None
    for u in grid:
        v = _root_in_v(dmc, info, C, float(u))
        if v is not None:
            break
        prev = float(u)
    else:
        if _min_psi(dmc, info, grid) > C:
            return 0.5, math.nan
        raise NoP0Solution("psi(u, v) = C has no solution on the admissible region")
    u_hi, v_hi = float(u), v
    if prev is not None:
        lo, hi = prev, u_hi
        while hi - lo > 1e-13:
            mid = 0.5 * (lo + hi)
            vm = _root_in_v(dmc, info, C, mid)
            if vm is None:
                lo = mid
            else:
                hi, v_hi = mid, vm
        u_hi = hi
    return u_hi, v_hi


def _min_psi(dmc, info, grid) -> float:
    us = grid[::10]
    vs = np.linspace(0.0, 1.0, 257)[None, :] * np.minimum(1.0 - us, 0.5)[:, None]
    return float(np.nanmin(psi(dmc, info, np.broadcast_to(us[:, None], vs.shape), vs)))


def solve_p0(dmc: Dmc, info: ChannelInfo, C: float) -> float:
    """Phase-1 exit level for Case 1; see :func:`solve_p0_pair`."""
    return solve_p0_pair(dmc, info, C)[0]


def design_length(N: float) -> float:
    """The L solving ``L + 3 sqrt(L) = N``."""
    s = (-3.0 + math.sqrt(9.0 + 4.0 * N)) / 2.0
    return s * s


def case2_backoff(rho: float, C: float, L: float) -> float:
    """Backoff for the shorter design length so that ``L (C - rho') = N (C - rho)``."""
    return rho - 3.0 / math.sqrt(L) * (C - rho)


def case2_log_eps(info: ChannelInfo, C: float, L: float, rho_prime: float, const_q: float) -> float:
    """``-ln eps_L`` for the retransmission schedule with ``p0 = 1 - 1/L``."""
    p0 = 1.0 - 1.0 / L
    z0 = math.log(L - 1.0)
    B, Bs = info.B, info.B_star
    inner = -L * rho_prime / C + (1.0 / C - p0 / B + 3.0 * (1.0 - p0) / (2.0 * Bs)) * z0 + const_q
    return -(B / p0) * inner


def theory_threshold(
    info: ChannelInfo, C: float, N: float, rho: float, const_q: float = 0.0, regime: str | None = None
) -> float:
    """Acceptance threshold ``-ln eps`` with the unknown channel constant set to ``const_q``."""
    if N <= 0 or rho <= 0:
        raise ValueError("N and rho must be positive")
    regime = regime or (CASE1 if info.B_star > C else CASE2)
    if regime == CASE1:
        out = info.B / C * N * rho - info.B * const_q
    else:
        L = design_length(N)
        if L <= 2.0:
            raise ThresholdDegenerate(f"design length L={L:.3g} too small for N={N}")
        out = case2_log_eps(info, C, L, case2_backoff(rho, C, L), const_q)
    if not out > 0:
        raise ThresholdDegenerate(f"threshold {out:.6g} is not positive (N*rho too small)")
    return out


@dataclass(frozen=True)
class SchemeParams:
    regime: str
    M: int
    N: float
    rho: float
    p0: float
    Z0: float
    log_eps: float
    n_max: int
    mode: str = THEORY
    const_q: float = 0.0
    L: float | None = None
    A: float | None = None

    def __post_init__(self):
        if self.regime not in (CASE1, CASE2):
            raise SchemeError(f"unknown regime {self.regime!r}")
        if self.M < 2:
            raise SchemeError("M must be at least 2")
        if not 0.5 <= self.p0 < 1.0:
            raise SchemeError(f"p0={self.p0} outside [1/2, 1)")
        if self.regime == CASE2 and not (self.A is not None and self.A > 0):
            raise SchemeError("case 2 needs a positive abort threshold A")
        if self.log_eps < self.Z0:
            raise ThresholdDegenerate(f"log_eps={self.log_eps:.6g} below the phase-2 entry level {self.Z0:.6g}")

    def with_threshold(self, log_eps: float) -> "SchemeParams":
        return replace(self, log_eps=float(log_eps))


def make_params(
    dmc: Dmc,
    info: ChannelInfo,
    M: int,
    N: float,
    rho: float,
    *,
    mode: str = THEORY,
    const_q: float = 0.0,
    regime: str | None = None,
    n_max_mult: float = 50.0,
    log_eps: float | None = None,
) -> SchemeParams:
    """Configure the scheme for a channel whose capacity is already in ``info``."""
    dmc.require_coding()
    if info.C is None or info.px_star is None:
        raise SchemeError("ChannelInfo has no capacity; solve it first")
    if not info.finite_B:
        raise SchemeError("B is infinite; the finite-B scheme does not apply")
    C = info.C
    regime = regime or info.regime
    L = A = None
    if regime == CASE1:
        p0 = solve_p0(dmc, info, C)
    else:
        L = design_length(N)
        if L <= 2.0:
            raise SchemeError(f"N={N} gives design length L={L:.3g}; need L > 2")
        p0 = 1.0 - 1.0 / L
    z0 = math.log(p0 / (1.0 - p0))
    if regime == CASE2:
        A = z0 / 2.0
    if log_eps is None:
        log_eps = theory_threshold(info, C, N, rho, const_q, regime)
    return SchemeParams(
        regime=regime,
        M=int(M),
        N=float(N),
        rho=float(rho),
        p0=float(p0),
        Z0=float(z0),
        log_eps=float(log_eps),
        n_max=int(math.ceil(n_max_mult * N)),
        mode=mode,
        const_q=float(const_q),
        L=L,
        A=A,
    )


# ---------------------------------------------------------------------------
# reference single-trial walk


def phase1_partition(state: PosteriorState, px_star, stream: crn.SharedStream, attempt: int, step: int) -> EncoderMap:
    """Assign every message to input x independently with probability ``px_star[x]``."""
    u = stream.partition(attempt, step, state.M)
    return EncoderMap(_assign(u, np.asarray(px_star, dtype=np.float64)))


def _assign(u: np.ndarray, px: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(px)
    out = np.searchsorted(cdf, u, side="right")
    # u >= cdf[-1] only through rounding; fall back to the last used input
    last = int(np.flatnonzero(px > 0)[-1])
    return np.minimum(out, last)


def _sample_output(cdf_rows: np.ndarray, u) -> np.ndarray:
    y = (np.asarray(u)[..., None] >= cdf_rows).sum(axis=-1)
    return np.minimum(y, cdf_rows.shape[-1] - 1)


@dataclass
class TrialOutcome:
    tau_total: int
    attempts: int
    error: bool
    phase1_len: int
    phase2_len: int
    aborted: bool
    w_true: int = -1
    decoded: int = -1
    log_err_post: float = -math.inf
    log_entropy: float = -math.inf


@dataclass
class StepRecord:
    """One channel use as seen by the reference walk."""

    attempt: int
    n: int
    phase: int
    j0: int
    before: PosteriorState
    enc: EncoderMap
    y: int
    after: PosteriorState


def trace_trial(
    dmc: Dmc,
    info: ChannelInfo,
    params: SchemeParams,
    seed: int,
    trial: int = 0,
    w_true: int | None = None,
) -> Iterator[StepRecord | TrialOutcome]:
    """Yield a :class:`StepRecord` per channel use, then the :class:`TrialOutcome`."""
    stream = crn.SharedStream(seed, trial)
    M = params.M
    w = stream.message(M) if w_true is None else int(w_true)
    cdf = np.cumsum(dmc.kernel, axis=1)
    px = np.asarray(info.px_star)
    tau = 0
    attempt = 0
    while True:
        state = init_uniform(M)
        n = p1 = p2 = 0
        frozen = None
        if params.regime == CASE2 and state.z(state.top()) >= params.Z0:
            frozen = state.top()
        while True:
            if tau >= params.n_max:
                yield TrialOutcome(tau, attempt + 1, False, p1, p2, True, w)
                return
            top = state.top()
            if params.regime == CASE1:
                j0 = top if state.z(top) >= params.Z0 else -1
            else:
                j0 = -1 if frozen is None else frozen
            if j0 >= 0:
                enc = EncoderMap.binary(M, j0, info.x0, info.x0_prime)
                p2 += 1
            else:
                enc = phase1_partition(state, px, stream, attempt, n)
                p1 += 1
            y = int(_sample_output(cdf[enc.assignment[w]], stream.noise(attempt, n)))
            after = bayes_update(state, enc, dmc, y)
            yield StepRecord(attempt, n, 2 if j0 >= 0 else 1, j0, state, enc, y, after)
            state = after
            n += 1
            tau += 1
            top = state.top()
            if params.regime == CASE1:
                if state.z(top) >= params.log_eps:
                    yield _finish(state, top, w, tau, attempt, p1, p2)
                    return
                continue
            if frozen is None and state.z(top) >= params.Z0:
                frozen = top
            if frozen is not None:
                zj = state.z(frozen)
                if zj >= params.log_eps:
                    yield _finish(state, frozen, w, tau, attempt, p1, p2)
                    return
                if zj <= params.A:
                    break
        attempt += 1


def _finish(state, decoded, w, tau, attempt, p1, p2) -> TrialOutcome:
    from vlfsim.posterior import log_entropy

    return TrialOutcome(
        tau_total=tau,
        attempts=attempt + 1,
        error=decoded != w,
        phase1_len=p1,
        phase2_len=p2,
        aborted=False,
        w_true=w,
        decoded=int(decoded),
        log_err_post=state.log_complement(decoded),
        log_entropy=log_entropy(state),
    )


def reference_trial(dmc, info, params, seed, trial=0, w_true=None) -> TrialOutcome:
    for rec in trace_trial(dmc, info, params, seed, trial, w_true):
        if isinstance(rec, TrialOutcome):
            return rec
    raise AssertionError("trace ended without an outcome")


# ---------------------------------------------------------------------------
# vectorized engine


@dataclass
class BatchResult:
    """Per-trial arrays, ordered by trial index."""

    trial: np.ndarray
    w_true: np.ndarray
    decoded: np.ndarray
    tau_total: np.ndarray
    attempts: np.ndarray
    phase1_len: np.ndarray
    phase2_len: np.ndarray
    aborted: np.ndarray
    log_err_post: np.ndarray
    log_entropy: np.ndarray
    # phase-2 entries and retransmissions split by whether the candidate was right
    entries_h0: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    retx_h0: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    entries_h1: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    retx_h1: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def error(self) -> np.ndarray:
        return (~self.aborted) & (self.decoded != self.w_true)

    def __len__(self) -> int:
        return len(self.trial)

    def outcome(self, i: int) -> TrialOutcome:
        return TrialOutcome(
            tau_total=int(self.tau_total[i]),
            attempts=int(self.attempts[i]),
            error=bool(self.error[i]),
            phase1_len=int(self.phase1_len[i]),
            phase2_len=int(self.phase2_len[i]),
            aborted=bool(self.aborted[i]),
            w_true=int(self.w_true[i]),
            decoded=int(self.decoded[i]),
            log_err_post=float(self.log_err_post[i]),
            log_entropy=float(self.log_entropy[i]),
        )

    @classmethod
    def concat(cls, parts: list["BatchResult"]) -> "BatchResult":
        names = [f.name for f in cls.__dataclass_fields__.values()]
        return cls(**{n: np.concatenate([getattr(p, n) for p in parts]) for n in names})


def _lse_cols(a: np.ndarray) -> np.ndarray:
    """Log-sum-exp down axis 0 (messages are rows, trials are columns)."""
    m = a.max(axis=0)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(a - safe).sum(axis=0)) + safe


def _shift_to_top(lp: np.ndarray):
    """Rescale each column so its leading entry is 0; return the leader and the others' log-mass.

    Log-odds of the leader are then ``-comp`` without any renormalization.
    """
    cols = np.arange(lp.shape[1])
    j = lp.argmax(axis=0)
    top = lp[j, cols]
    if not np.all(np.isfinite(top)):
        raise DesyncError("observation has zero probability under the decoder's posterior")
    lp -= top
    others = lp.copy()
    others[j, cols] = -np.inf
    return j, _lse_cols(others)


def _log_entropy_cols(lp: np.ndarray, j: np.ndarray, log_comp: np.ndarray) -> np.ndarray:
    cols = np.arange(lp.shape[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(np.isfinite(lp), lp + np.log(-lp), -np.inf)
        terms[j, cols] = -np.inf
        d = np.exp(log_comp)
        factor = np.where(d < 1e-12, 1.0, -(1.0 - d) * np.log1p(-d) / np.where(d > 0, d, 1.0))
        top_term = np.where(np.isfinite(log_comp) & (factor > 0), log_comp + np.log(factor), -np.inf)
    return _lse_cols(np.vstack([terms, top_term[None, :]]))


_RESULT_COUNTERS = ("entries_h0", "entries_h1", "retx_h0", "retx_h1")


class _Active:
    """Per-trial state of the trials still transmitting; ``lp`` is (M, active)."""

    vectors = ("idx", "w", "tr", "attempt", "n", "tau", "p1", "p2", "frozen", "j", "comp", "ztop")

    def __init__(self, **arrays):
        self.__dict__.update(arrays)

    def keep(self, mask: np.ndarray) -> None:
        self.lp = self.lp[:, mask]
        for name in self.vectors + _RESULT_COUNTERS:
            setattr(self, name, getattr(self, name)[mask])

    def refresh_top(self) -> None:
        self.j, self.comp = _shift_to_top(self.lp)
        self.ztop = -self.comp


def simulate_batch(
    dmc: Dmc,
    info: ChannelInfo,
    params: SchemeParams,
    seed: int,
    trials: np.ndarray,
    w_true: np.ndarray | None = None,
) -> BatchResult:
    """Run the trials listed in ``trials`` side by side; results follow that order."""
    trials = np.asarray(trials, dtype=np.int64)
    T = trials.size
    M = params.M
    case2 = params.regime == CASE2
    with np.errstate(divide="ignore"):
        logk = np.log(dmc.kernel)
    cdf = np.cumsum(dmc.kernel, axis=1)
    px = np.asarray(info.px_star, dtype=np.float64)
    px_cdf = np.cumsum(px)
    px_last = int(np.flatnonzero(px > 0)[-1])
    x0, x0p = info.x0, info.x0_prime
    log_unif = -math.log(M)
    j_idx = np.arange(M, dtype=np.uint64)[:, None]
    msg = np.arange(M)[:, None]
    binary = dmc.input_size == 2

    if w_true is None:
        w_true = np.minimum((crn.uniforms(seed, crn.STREAM_MESSAGE, trials) * M).astype(np.int64), M - 1)
    w_all = np.asarray(w_true, dtype=np.int64)

    out = {
        "decoded": np.full(T, -1, np.int64),
        "tau_total": np.zeros(T, np.int64),
        "attempts": np.ones(T, np.int64),
        "phase1_len": np.zeros(T, np.int64),
        "phase2_len": np.zeros(T, np.int64),
        "aborted": np.zeros(T, bool),
        "log_err_post": np.full(T, -np.inf),
        "log_entropy": np.full(T, -np.inf),
    }
    out.update({k: np.zeros(T, np.int64) for k in _RESULT_COUNTERS})

    zeros = lambda: np.zeros(T, np.int64)  # noqa: E731
    s = _Active(
        idx=np.arange(T), lp=np.full((M, T), log_unif), w=w_all.copy(), tr=trials.astype(np.uint64),
        attempt=zeros(), n=zeros(), tau=zeros(), p1=zeros(), p2=zeros(), frozen=np.full(T, -1, np.int64),
        **{k: zeros() for k in _RESULT_COUNTERS},
    )
    s.refresh_top()

    def enter_phase2(mask):
        s.frozen[mask] = s.j[mask]
        s.entries_h0 += mask & (s.j == s.w)
        s.entries_h1 += mask & (s.j != s.w)

    def retire(mask, **extra):
        gi = s.idx[mask]
        for key, arr in (("tau_total", s.tau), ("attempts", s.attempt + 1), ("phase1_len", s.p1),
                         ("phase2_len", s.p2)) + tuple((k, getattr(s, k)) for k in _RESULT_COUNTERS):
            out[key][gi] = arr[mask]
        for key, arr in extra.items():
            out[key][gi] = arr
        s.keep(~mask)

    if case2:
        enter_phase2(s.ztop >= params.Z0)

    while s.idx.size:
        A = s.idx.size
        cols = np.arange(A)
        abort = s.tau >= params.n_max
        if abort.any():
            retire(abort, aborted=True)
            continue

        j0 = s.frozen if case2 else np.where(s.ztop >= params.Z0, s.j, -1)
        in2 = j0 >= 0
        enc = np.full((M, A), x0p, np.int64)
        enc[j0[in2], cols[in2]] = x0
        c1 = cols[~in2]
        if c1.size:
            h = crn.hash_key(seed, crn.STREAM_PARTITION, s.tr[c1], s.attempt[c1], s.n[c1])
            u = crn.to_uniform(crn.splitmix64(h[None, :] ^ j_idx))
            enc[:, c1] = np.minimum(np.searchsorted(px_cdf, u, side="right"), px_last)
        s.p1 += ~in2
        s.p2 += in2

        x_true = enc[s.w, cols]
        u = crn.uniforms(seed, crn.STREAM_NOISE, s.tr, s.attempt, s.n)
        y = _sample_output(cdf[x_true], u)
        if binary:
            s.lp += np.where(enc == 0, logk[0, y], logk[1, y])
        else:
            s.lp += np.take_along_axis(logk[:, y], enc, axis=0)
        s.n += 1
        s.tau += 1
        s.refresh_top()

        if not case2:
            done = s.ztop >= params.log_eps
            dec = s.j
        else:
            enter_phase2((s.frozen < 0) & (s.ztop >= params.Z0))
            act = s.frozen >= 0
            # a lagging candidate holds at most half the mass, so log1p is accurate
            lpf = s.lp[np.maximum(s.frozen, 0), cols] - np.logaddexp(0.0, s.comp)
            with np.errstate(divide="ignore", invalid="ignore"):
                zf = np.where(s.frozen == s.j, s.ztop, lpf - np.log1p(-np.exp(np.minimum(lpf, -LN2))))
            done = act & (zf >= params.log_eps)
            dec = s.frozen.copy()
            retx = act & ~done & (zf <= params.A)
            if retx.any():
                s.retx_h0 += retx & (s.frozen == s.w)
                s.retx_h1 += retx & (s.frozen != s.w)
                s.lp[:, retx] = 0.0
                s.attempt[retx] += 1
                for name in ("n", "p1", "p2"):
                    getattr(s, name)[retx] = 0
                s.frozen[retx] = -1
                s.j[retx], s.comp[retx] = 0, math.log(M - 1.0)
                s.ztop[retx] = -s.comp[retx]
                enter_phase2(retx & (s.ztop >= params.Z0))

        if done.any():
            dd = dec[done]
            norm = np.logaddexp(0.0, s.comp[done])
            lpd = s.lp[:, done] - norm
            jd = s.j[done]
            comp_top = s.comp[done] - norm
            # complement of the decoded message; equals the leader's when it leads
            cd = comp_top.copy()
            lagging = dd != jd
            if lagging.any():
                cd[lagging] = _lse_cols(np.where(msg == dd[lagging], -np.inf, lpd[:, lagging]))
            retire(
                done,
                decoded=dd,
                log_err_post=cd,
                log_entropy=_log_entropy_cols(lpd, jd, comp_top),
            )

    return BatchResult(trial=trials, w_true=w_all, **out)


def run_trial(
    dmc: Dmc, info: ChannelInfo, params: SchemeParams, w_true: int, seed: int, trial: int = 0
) -> TrialOutcome:
    """One full transmission of ``w_true``; a pure function of its arguments."""
    res = simulate_batch(dmc, info, params, seed, np.array([trial]), np.array([w_true]))
    return res.outcome(0)


# ---------------------------------------------------------------------------
# chunked execution and threshold calibration

CHUNK = 10_000
CHUNK_CELLS = 2_000_000


def chunk_size(M: int) -> int:
    """Trials per chunk, keeping the (M, trials) posterior block bounded."""
    return max(1, min(CHUNK, CHUNK_CELLS // M))


def _run_chunk(args) -> BatchResult:
    dmc, info, params, seed, lo, hi = args
    return simulate_batch(dmc, info, params, seed, np.arange(lo, hi))


def run_trials(
    dmc: Dmc, info: ChannelInfo, params: SchemeParams, seed: int, trials: int, workers: int = 1, start: int = 0
) -> BatchResult:
    """Trials ``start .. start+trials-1`` in fixed-size chunks, merged in trial order.

    Every trial is a pure function of ``(seed, trial)``, so the result does not
    depend on ``workers``.
    """
    bounds = list(range(start, start + trials, chunk_size(params.M))) + [start + trials]
    jobs = [(dmc, info, params, seed, a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    if workers <= 1 or len(jobs) == 1:
        parts = [_run_chunk(j) for j in jobs]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    return BatchResult.concat(parts)


@dataclass(frozen=True)
class Calibration:
    log_eps: float
    mean_tau: float
    ci_low: float
    ci_high: float
    evaluations: int
    batch: BatchResult = field(repr=False, compare=False)


def _tau_interval(batch: BatchResult):
    from vlfsim.stats import mean_interval

    return mean_interval(batch.tau_total[~batch.aborted])


def calibrate_threshold(
    dmc: Dmc,
    info: ChannelInfo,
    params: SchemeParams,
    target_N: float,
    trials: int,
    tol_rel: float = 0.02,
    seed: int = 0,
    workers: int = 1,
    *,
    pilot: int = 10_000,
    max_evals: int = 60,
) -> Calibration:
    """Find ``log_eps`` whose Monte Carlo ``E[tau_total]`` hits ``target_N``.

    All evaluations reuse the same trials (common random numbers), which makes
    the estimate a fine-grained nondecreasing step function of the threshold.
    A pilot run of ``pilot`` trials brackets and roughly locates the root by
    regula falsi; the full run then refines it until the mean is within
    ``tol_rel * target_N`` and the 95% interval covers ``target_N``. The last
    full evaluation is returned so callers need not re-simulate.
    """
    if target_N <= 0:
        raise ValueError("target_N must be positive")
    if trials < 1000:
        raise ValueError("calibration needs at least 1000 trials")
    evals = 0

    def evaluate(le, n):
        nonlocal evals
        evals += 1
        b = run_trials(dmc, info, params.with_threshold(le), seed, n, workers)
        return b, _tau_interval(b)

    lo = params.Z0 + 0.01
    hi = max(10.0 * info.B / info.C * params.N * params.rho, lo + 1.0)
    n_pilot = min(pilot, trials)
    _, f_lo = evaluate(lo, n_pilot)
    if f_lo.estimate > target_N:
        raise CalibrationError(f"E[tau]={f_lo.estimate:.4g} already exceeds {target_N} at the lower bracket")
    _, f_hi = evaluate(hi, n_pilot)
    if not f_hi.estimate >= target_N:
        raise CalibrationError(f"E[tau]={f_hi.estimate:.4g} below {target_N} at the upper bracket {hi:.4g}")

    def solve(lo, flo, hi, fhi, n, done):
        side = 0
        best = None
        while evals < max_evals:
            # Illinois variant of regula falsi
            le = hi - (fhi - target_N) * (hi - lo) / (fhi - flo) if fhi > flo else 0.5 * (lo + hi)
            if not lo < le < hi:
                le = 0.5 * (lo + hi)
            batch, f = evaluate(le, n)
            best = (le, batch, f)
            if done(f):
                return best, lo, flo, hi, fhi
            if f.estimate < target_N:
                lo, flo = le, f.estimate
                if side == -1:
                    fhi = target_N + 0.5 * (fhi - target_N)
                side = -1
            else:
                hi, fhi = le, f.estimate
                if side == 1:
                    flo = target_N + 0.5 * (flo - target_N)
                side = 1
            if hi - lo < 1e-9:
                return best, lo, flo, hi, fhi
        raise CalibrationError(f"no convergence within {max_evals} evaluations")

    # the pilot only needs to land near the root; slack grows with its noise
    coarse = lambda f: abs(f.estimate - target_N) <= max(0.25 * tol_rel * target_N, f.half_width)  # noqa: E731
    (le, batch, f), lo, flo, hi, fhi = solve(lo, f_lo.estimate, hi, f_hi.estimate, n_pilot, coarse)
    if trials > n_pilot:
        batch, f = evaluate(le, trials)

    def fine(f):
        return abs(f.estimate - target_N) <= tol_rel * target_N and f.contains(target_N)

    if not fine(f):
        # re-bracket around the pilot root using the slope E[tau] ~ log_eps / B
        step = max(4.0 * info.B * f.half_width, 1e-3 * le, 0.05)
        direction = 1.0 if f.estimate < target_N else -1.0
        a, fa = le, f.estimate
        while True:
            b_le = max(a + direction * step, params.Z0 + 0.01)
            batch_b, fb = evaluate(b_le, trials)
            if fine(fb):
                return Calibration(b_le, fb.estimate, fb.low, fb.high, evals, batch_b)
            if (fb.estimate - target_N) * direction >= 0 or b_le <= params.Z0 + 0.01:
                break
            a, fa = b_le, fb.estimate
            step *= 2.0
            if evals >= max_evals:
                raise CalibrationError("could not re-bracket the full-size run")
        pairs = sorted([(a, fa), (b_le, fb.estimate)])
        (le, batch, f), *_ = solve(pairs[0][0], pairs[0][1], pairs[1][0], pairs[1][1], trials, fine)
    if not fine(f):
        raise CalibrationError(f"E[tau]={f.estimate:.6g} not within tolerance of {target_N}")
    return Calibration(le, f.estimate, f.low, f.high, evals, batch)
