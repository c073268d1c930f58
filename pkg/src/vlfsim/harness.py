"""Monte Carlo campaigns over a grid of target blocklengths, and their CSV/JSONL output."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from vlfsim.capacity import capacity, restrict_to_support
from vlfsim.channel import ChannelInfo, Dmc, compute_info, load_channel
from vlfsim.lab import fano_check_log
from vlfsim.scheme import (
    CALIBRATED,
    THEORY,
    BatchResult,
    calibrate_threshold,
    make_params,
    run_trials,
)
from vlfsim.stats import Interval, log_mean_interval, mean_interval, rule_of_three, wilson

log = logging.getLogger(__name__)

MAX_MESSAGES = 1_000_000
MIN_TRIALS = 100


class ConfigError(ValueError):
    pass


class InfeasiblePoint(RuntimeError):
    pass


class MessageSpaceTooLarge(InfeasiblePoint):
    pass


def default_workers() -> int:
    env = os.environ.get("VLF_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"VLF_THREADS={env!r} is not an integer") from exc
        if n < 1:
            raise ConfigError("VLF_THREADS must be at least 1")
        return n
    return os.cpu_count() or 1


@dataclass(frozen=True)
class RhoFamily:
    """``pow:s`` gives rho_N = N^-s; ``const:c`` gives rho_N = c."""

    kind: str
    value: float

    @classmethod
    def parse(cls, text: str) -> "RhoFamily":
        kind, _, val = text.partition(":")
        try:
            v = float(val)
        except ValueError as exc:
            raise ConfigError(f"bad rho family {text!r}; use pow:S or const:C") from exc
        fam = cls(kind.strip().lower(), v)
        fam.validate()
        return fam

    def validate(self) -> None:
        if self.kind == "pow":
            if not 0.0 < self.value < 1.0:
                raise ConfigError(f"power-law exponent {self.value} outside (0, 1)")
        elif self.kind == "const":
            if not self.value > 0:
                raise ConfigError("constant backoff must be positive")
        else:
            raise ConfigError(f"unknown rho family {self.kind!r}")

    @property
    def relaxed(self) -> bool:
        """Exponents in [1/2, 1) violate rho_N sqrt(N) -> infinity."""
        return self.kind == "pow" and self.value >= 0.5

    def __call__(self, N: float) -> float:
        return N ** (-self.value) if self.kind == "pow" else self.value

    def __str__(self) -> str:
        return f"{self.kind}:{self.value:g}"


@dataclass
class CampaignConfig:
    channel_path: str
    N_grid: list[float]
    rho: str = "pow:0.333"
    mode: str = CALIBRATED
    const_q: float = 0.0
    trials: int = 100_000
    seed: int = 42
    n_max_mult: float = 50.0
    M: int | None = None
    regime: str | None = None
    tol_rel: float = 0.02
    out: str | None = None
    fmt: str = "csv"
    workers: int = 1

    def validate(self) -> RhoFamily:
        if self.trials < MIN_TRIALS:
            raise ConfigError(f"trials={self.trials}; need at least {MIN_TRIALS}")
        if not self.N_grid:
            raise ConfigError("N grid is empty")
        if any(not (n > 0 and math.isfinite(n)) for n in self.N_grid):
            raise ConfigError("every N must be positive")
        if self.mode not in (THEORY, CALIBRATED):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == CALIBRATED and self.trials < 1000:
            raise ConfigError("calibrated mode needs at least 1000 trials")
        if self.M is not None and self.M < 2:
            raise ConfigError("M must be at least 2")
        if self.n_max_mult <= 1:
            raise ConfigError("n_max multiplier must exceed 1")
        if self.fmt not in ("csv", "jsonl"):
            raise ConfigError(f"unknown output format {self.fmt!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        return RhoFamily.parse(self.rho)

    def hash(self, dmc: Dmc) -> str:
        """Digest of everything that determines the results (not paths or workers)."""
        keys = ("N_grid", "rho", "mode", "const_q", "trials", "seed", "n_max_mult", "M", "regime", "tol_rel")
        payload = {k: getattr(self, k) for k in keys}
        payload["N_grid"] = [float(n) for n in self.N_grid]
        payload["kernel"] = dmc.kernel.tolist()
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class McSummary:
    N: float
    rho: float
    M: int
    rate: float
    rho_eff: float
    mode: str
    regime: str
    log_eps: float
    trials: int
    completed: int
    aborted: int
    errors: int
    pe_hat: float
    pe_low: float
    pe_high: float
    log_pe: float
    log_pe_low: float
    log_pe_high: float
    mean_tau: float
    tau_low: float
    tau_high: float
    mean_attempts: float
    md_ratio: float
    md_low: float
    md_high: float
    md_count_lower: float
    B_over_C: float
    log_entropy: float
    fano_ok: bool
    flags: str
    config_hash: str
    seed: int
    wall_time: float = field(default=0.0, compare=False)


CSV_COLUMNS = [f for f in McSummary.__dataclass_fields__ if f != "wall_time"]


def estimate_pe(errors: int, trials: int) -> tuple[float, Interval]:
    """Count estimate with a Wilson interval; zero errors get the rule-of-three upper bound."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    ci = wilson(errors, trials)
    if errors == 0:
        ci = Interval(0.0, 0.0, rule_of_three(trials))
    return errors / trials, ci


@dataclass(frozen=True)
class PointPlan:
    N: float
    rho: float
    M: int


def plan_point(N: float, rho: float, C: float, M: int | None) -> PointPlan:
    """Message count for one grid point: fixed M, or round(exp(N (C - rho)))."""
    if M is not None:
        return PointPlan(N, rho, int(M))
    log_m = N * (C - rho)
    if log_m < math.log(2):
        raise InfeasiblePoint(f"N={N:g}: N(C - rho) = {log_m:.4g} < ln 2, fewer than 2 messages")
    if log_m > math.log(MAX_MESSAGES):
        raise MessageSpaceTooLarge(
            f"N={N:g}: M = exp({log_m:.4g}) exceeds {MAX_MESSAGES}; use a fixed --M (small-M mode)"
        )
    return PointPlan(N, rho, int(round(math.exp(log_m))))


def prepare_channel(dmc: Dmc) -> tuple[Dmc, ChannelInfo]:
    """Capacity-solve and drop inputs outside the capacity support."""
    dmc.require_coding()
    res = capacity(dmc)
    if len(res.support) < dmc.input_size:
        dmc, res = restrict_to_support(dmc, res)
    info = compute_info(dmc).with_capacity(res.C, res.px_star)
    return dmc, info


def summarize(
    batch: BatchResult, plan: PointPlan, info: ChannelInfo, mode: str, regime: str, log_eps: float,
    cfg_hash: str, seed: int, flags: list[str],
) -> McSummary:
    ok = ~batch.aborted
    done = int(ok.sum())
    errors = int(batch.error.sum())
    C = info.C
    rate = math.log(plan.M) / plan.N
    rho_eff = C - rate
    denom = plan.N * rho_eff
    if done:
        pe_hat, pe_ci = estimate_pe(errors, done)
        lp = log_mean_interval(batch.log_err_post[ok])
        tau = mean_interval(batch.tau_total[ok])
        lh = log_mean_interval(batch.log_entropy[ok])
        attempts = float(batch.attempts[ok].mean())
    else:
        pe_hat, pe_ci = math.nan, Interval(math.nan, math.nan, math.nan)
        lp = lh = tau = Interval(math.nan, math.nan, math.nan)
        attempts = math.nan
    if denom > 0 and done:
        md = -lp.estimate / denom
        md_low, md_high = -lp.high / denom, -lp.low / denom
        md_count = -math.log(pe_ci.high) / denom if pe_ci.high > 0 else math.inf
    else:
        md = md_low = md_high = md_count = math.nan
        flags = flags + ["rate-above-capacity"]
    fano = bool(done) and fano_check_log(lh, lp, plan.M)
    if mode == THEORY and done and tau.estimate > plan.N:
        flags = flags + ["mean-tau-exceeds-N"]
    if batch.aborted.any():
        flags = flags + [f"aborted:{int(batch.aborted.sum())}"]
    return McSummary(
        N=plan.N, rho=plan.rho, M=plan.M, rate=rate, rho_eff=rho_eff, mode=mode, regime=regime,
        log_eps=float(log_eps), trials=len(batch), completed=done, aborted=len(batch) - done, errors=errors,
        pe_hat=pe_hat, pe_low=pe_ci.low, pe_high=pe_ci.high,
        log_pe=lp.estimate, log_pe_low=lp.low, log_pe_high=lp.high,
        mean_tau=tau.estimate, tau_low=tau.low, tau_high=tau.high, mean_attempts=attempts,
        md_ratio=md, md_low=md_low, md_high=md_high, md_count_lower=md_count,
        B_over_C=info.B / C, log_entropy=lh.estimate, fano_ok=fano, flags=";".join(flags),
        config_hash=cfg_hash, seed=seed,
    )


def run_point(dmc: Dmc, info: ChannelInfo, cfg: CampaignConfig, fam: RhoFamily, N: float, cfg_hash: str) -> McSummary:
    start = time.perf_counter()
    plan = plan_point(N, fam(N), info.C, cfg.M)
    params = make_params(
        dmc, info, plan.M, N, plan.rho, mode=cfg.mode, const_q=cfg.const_q, regime=cfg.regime,
        n_max_mult=cfg.n_max_mult,
    )
    if cfg.mode == CALIBRATED:
        cal = calibrate_threshold(dmc, info, params, N, cfg.trials, cfg.tol_rel, cfg.seed, cfg.workers)
        batch, log_eps = cal.batch, cal.log_eps
    else:
        batch, log_eps = run_trials(dmc, info, params, cfg.seed, cfg.trials, cfg.workers), params.log_eps
    flags = ["relaxed-rho"] if fam.relaxed else []
    out = summarize(batch, plan, info, cfg.mode, params.regime, log_eps, cfg_hash, cfg.seed, flags)
    out.wall_time = time.perf_counter() - start
    return out


def run_campaign(cfg: CampaignConfig, dmc: Dmc | None = None) -> list[McSummary]:
    """One summary per feasible N; points with fewer than 2 messages are skipped and logged."""
    fam = cfg.validate()
    dmc = dmc if dmc is not None else load_channel(cfg.channel_path)
    cfg_hash = cfg.hash(dmc)
    dmc, info = prepare_channel(dmc)
    out = []
    for N in cfg.N_grid:
        try:
            out.append(run_point(dmc, info, cfg, fam, float(N), cfg_hash))
        except MessageSpaceTooLarge:
            raise
        except InfeasiblePoint as exc:
            log.warning("skipping point: %s", exc)
    return out


# ---------------------------------------------------------------------------
# tables and files


@dataclass(frozen=True)
class MdRow:
    N: float
    rho: float
    md_ratio: float
    md_low: float
    md_high: float
    reference: float
    kind: str


def md_curve(summaries: list[McSummary]) -> list[MdRow]:
    """``(N, rho, md_ratio, B/C)`` rows; points without an error estimate carry lower bounds."""
    if len(summaries) < 2:
        raise ValueError("md_curve needs at least two points")
    rows = []
    for s in sorted(summaries, key=lambda s: s.N):
        if math.isfinite(s.md_ratio):
            rows.append(MdRow(s.N, s.rho_eff, s.md_ratio, s.md_low, s.md_high, s.B_over_C, "estimate"))
        else:
            rows.append(MdRow(s.N, s.rho_eff, math.nan, s.md_count_lower, math.inf, s.B_over_C, "lower-bound"))
    return rows


def nondecreasing_within_ci(rows: list[MdRow]) -> bool:
    """Each ratio's interval reaches at least as high as the previous one's lower end."""
    est = [r for r in rows if r.kind == "estimate"]
    return all(b.md_high >= a.md_low for a, b in zip(est, est[1:]))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(summaries: list[McSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in summaries:
        d = asdict(s)
        w.writerow([_fmt(d[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def to_jsonl(summaries: list[McSummary]) -> str:
    def clean(v):
        return None if isinstance(v, float) and not math.isfinite(v) else v

    return "".join(json.dumps({k: clean(v) for k, v in asdict(s).items()}) + "\n" for s in summaries)


def write_results(summaries: list[McSummary], path: str | Path, fmt: str = "csv") -> None:
    Path(path).write_text(to_csv(summaries) if fmt == "csv" else to_jsonl(summaries))


_INT_FIELDS = {"M", "trials", "completed", "aborted", "errors", "seed"}


def read_csv(path: str | Path) -> list[McSummary]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for k in CSV_COLUMNS:
                v = rec[k]
                if k in _INT_FIELDS:
                    kw[k] = int(v)
                elif k == "fano_ok":
                    kw[k] = v == "true"
                elif k in ("mode", "regime", "flags", "config_hash"):
                    kw[k] = v
                else:
                    kw[k] = float(v)
            rows.append(McSummary(**kw))
    return rows


def md_table_text(rows: list[MdRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "rho_eff", "md_ratio", "md_low", "md_high", "B_over_C", "kind"])
    for r in rows:
        w.writerow([_fmt(r.N), _fmt(r.rho), _fmt(r.md_ratio), _fmt(r.md_low), _fmt(r.md_high),
                    _fmt(r.reference), r.kind])
    return buf.getvalue()


def as_array(summaries: list[McSummary], name: str) -> np.ndarray:
    return np.array([getattr(s, name) for s in summaries], dtype=np.float64)
