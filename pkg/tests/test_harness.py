import json
import math

import pytest

from vlfsim import bsc
from vlfsim.harness import (
    CSV_COLUMNS,
    MAX_MESSAGES,
    CampaignConfig,
    ConfigError,
    InfeasiblePoint,
    McSummary,
    MessageSpaceTooLarge,
    RhoFamily,
    default_workers,
    estimate_pe,
    md_curve,
    nondecreasing_within_ci,
    plan_point,
    read_csv,
    run_campaign,
    to_csv,
    to_jsonl,
    write_results,
)
from vlfsim.scheme import CALIBRATED, THEORY


@pytest.fixture
def bsc_file(tmp_path):
    path = tmp_path / "bsc.json"
    path.write_text(json.dumps({"transition": [[0.9, 0.1], [0.1, 0.9]]}))
    return str(path)


def summary(N, log_pe, half=0.1, **kw):
    rho_eff = 0.2
    base = dict(
        N=N, rho=N ** (-1 / 3), M=16, rate=math.log(16) / N, rho_eff=rho_eff, mode=CALIBRATED, regime="case1",
        log_eps=1.0, trials=1000, completed=1000, aborted=0, errors=0, pe_hat=0.0, pe_low=0.0, pe_high=0.003,
        log_pe=log_pe, log_pe_low=log_pe - half, log_pe_high=log_pe + half, mean_tau=N, tau_low=N - 1,
        tau_high=N + 1, mean_attempts=1.0, md_ratio=-log_pe / (N * rho_eff),
        md_low=-(log_pe + half) / (N * rho_eff), md_high=-(log_pe - half) / (N * rho_eff),
        md_count_lower=0.1, B_over_C=4.77574191576927, log_entropy=log_pe - 1, fano_ok=True, flags="",
        config_hash="0" * 16, seed=1,
    )
    base.update(kw)
    return McSummary(**base)


class TestEstimatePe:
    def test_zero_errors_rule_of_three(self):
        pe, ci = estimate_pe(0, 1000)
        assert pe == 0.0 and ci.low == 0.0 and ci.high == pytest.approx(0.003)

    def test_wilson_interval(self):
        pe, ci = estimate_pe(100, 10_000)
        assert pe == 0.01
        assert ci.low == pytest.approx(0.0082, abs=5e-5) and ci.high == pytest.approx(0.0121, abs=5e-5)

    def test_all_errors(self):
        pe, ci = estimate_pe(50, 50)
        assert pe == 1.0 and ci.high == 1.0

    def test_no_trials(self):
        with pytest.raises(ValueError):
            estimate_pe(0, 0)


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            {"trials": 0},
            {"N_grid": []},
            {"N_grid": [100, -1]},
            {"rho": "pow:1.5"},
            {"rho": "exp:0.3"},
            {"rho": "const:0"},
            {"M": 1},
            {"mode": "guess"},
            {"workers": 0},
            {"fmt": "xml"},
            {"mode": CALIBRATED, "trials": 500},
        ],
    )
    def test_rejects(self, bsc_file, kw):
        cfg = CampaignConfig(channel_path=bsc_file, N_grid=kw.pop("N_grid", [100]), **kw)
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_rho_families(self):
        assert RhoFamily.parse("pow:0.5").relaxed
        assert not RhoFamily.parse("pow:0.333").relaxed
        assert RhoFamily.parse("pow:0.5")(400.0) == pytest.approx(0.05)
        assert RhoFamily.parse("const:0.1")(1e6) == 0.1

    def test_hash_ignores_paths_and_workers(self, bsc_file):
        dmc = bsc(0.1)
        a = CampaignConfig(channel_path=bsc_file, N_grid=[100], workers=1, out="a.csv")
        b = CampaignConfig(channel_path="other.json", N_grid=[100], workers=4, out="b.csv")
        c = CampaignConfig(channel_path=bsc_file, N_grid=[100], seed=7)
        assert a.hash(dmc) == b.hash(dmc) != c.hash(dmc)

    def test_thread_variable(self, monkeypatch):
        monkeypatch.setenv("VLF_THREADS", "3")
        assert default_workers() == 3
        monkeypatch.setenv("VLF_THREADS", "zero")
        with pytest.raises(ConfigError):
            default_workers()


class TestPlanning:
    def test_literal_rate_is_too_large(self):
        C = 0.3680642071684971
        with pytest.raises(MessageSpaceTooLarge):
            plan_point(200.0, 200 ** (-1 / 3), C, None)

    def test_fewer_than_two_messages(self):
        with pytest.raises(InfeasiblePoint):
            plan_point(2.0, 0.1, 0.3680642071684971, None)

    def test_rate_coupled_count(self):
        p = plan_point(20.0, 0.1, 0.3680642071684971, None)
        assert p.M == round(math.exp(20 * (0.3680642071684971 - 0.1)))
        assert p.M < MAX_MESSAGES

    def test_fixed_count(self):
        assert plan_point(800.0, 0.1, 0.37, 16).M == 16


class TestCampaign:
    def test_small_m_theory_run(self, bsc_file):
        cfg = CampaignConfig(channel_path=bsc_file, N_grid=[40, 60], M=8, mode=THEORY, trials=2000, seed=3)
        rows = run_campaign(cfg)
        assert [r.N for r in rows] == [40.0, 60.0]
        for r in rows:
            assert r.completed == 2000 and r.aborted == 0
            assert r.rate == pytest.approx(math.log(8) / r.N)
            assert r.fano_ok
            assert math.isfinite(r.md_ratio)
            assert ("mean-tau-exceeds-N" in r.flags) == (r.mean_tau > r.N)

    def test_infeasible_point_skipped(self, bsc_file):
        cfg = CampaignConfig(channel_path=bsc_file, N_grid=[2, 20], mode=THEORY, trials=200, rho="const:0.1")
        rows = run_campaign(cfg)
        assert [r.N for r in rows] == [20.0]

    def test_message_space_error_propagates(self, bsc_file):
        cfg = CampaignConfig(channel_path=bsc_file, N_grid=[200], mode=THEORY, trials=200)
        with pytest.raises(MessageSpaceTooLarge):
            run_campaign(cfg)

    def test_relaxed_backoff_flagged(self, bsc_file):
        cfg = CampaignConfig(channel_path=bsc_file, N_grid=[50], M=4, mode=THEORY, trials=200, rho="pow:0.6")
        assert "relaxed-rho" in run_campaign(cfg)[0].flags

    def test_calibrated_output_is_worker_independent(self, bsc_file):
        kw = dict(channel_path=bsc_file, N_grid=[60], M=8, trials=3000, seed=5, tol_rel=0.02)
        one = run_campaign(CampaignConfig(workers=1, **kw))
        two = run_campaign(CampaignConfig(workers=2, **kw))
        assert to_csv(one) == to_csv(two)
        r = one[0]
        assert abs(r.mean_tau - 60) <= 0.02 * 60 and r.tau_low <= 60 <= r.tau_high


class TestOutput:
    def test_csv_round_trip(self, tmp_path):
        rows = [summary(100.0, -90.0), summary(200.0, -190.0, flags="relaxed-rho")]
        path = tmp_path / "out.csv"
        write_results(rows, path)
        text = path.read_text()
        assert text.splitlines()[0].split(",") == CSV_COLUMNS
        assert "wall_time" not in text
        assert read_csv(path) == rows

    def test_jsonl(self):
        lines = to_jsonl([summary(100.0, -90.0, md_count_lower=math.inf)]).splitlines()
        rec = json.loads(lines[0])
        assert rec["N"] == 100.0 and rec["md_count_lower"] is None

    def test_md_curve_rows(self):
        rows = md_curve([summary(200.0, -190.0), summary(100.0, -90.0)])
        assert [r.N for r in rows] == [100.0, 200.0]
        assert {r.reference for r in rows} == {4.77574191576927}
        assert all(r.kind == "estimate" and math.isfinite(r.md_ratio) for r in rows)

    def test_md_curve_zero_error_points(self):
        rows = md_curve([summary(100.0, -math.inf, md_ratio=math.nan), summary(200.0, -math.inf, md_ratio=math.nan)])
        assert all(r.kind == "lower-bound" and r.md_low == 0.1 for r in rows)

    def test_md_curve_needs_two_points(self):
        with pytest.raises(ValueError):
            md_curve([summary(100.0, -90.0)])

    def test_trend_check(self):
        up = md_curve([summary(100.0, -80.0), summary(200.0, -200.0)])
        flat = md_curve([summary(100.0, -80.0, half=5), summary(200.0, -155.0, half=5)])
        down = md_curve([summary(100.0, -100.0), summary(200.0, -160.0)])
        assert nondecreasing_within_ci(up)
        assert nondecreasing_within_ci(flat)
        assert not nondecreasing_within_ci(down)
