import numpy as np
import pytest

from vlfsim.drift_audit import DriftAuditReport, audit_states, max_step_change
from vlfsim.harness import prepare_channel
from vlfsim.posterior import EncoderMap, bayes_update, init_uniform
from vlfsim.scheme import StepRecord


class TestAuditStates:
    @pytest.mark.parametrize("which", ["bsc01", "asym"])
    def test_identities_hold(self, request, which):
        dmc, info = prepare_channel(request.getfixturevalue(which))
        rep = audit_states(dmc, info, 1500, seed=7, partition_every=25)
        assert rep.ok, rep.as_dict()
        assert rep.states == 1500
        assert rep.phase1_states > 0 and rep.phase2_states > 0 and rep.partition_states > 0

    def test_extra_steps_only_feed_step_bound(self, bsc01):
        dmc, info = prepare_channel(bsc01)
        rep = audit_states(dmc, info, 100, seed=1, step_records=2000)
        assert rep.states == 100 and rep.steps >= 2000
        assert rep.step_excess <= 1e-9

    def test_deterministic(self, asym):
        dmc, info = prepare_channel(asym)
        assert audit_states(dmc, info, 200, seed=3) == audit_states(dmc, info, 200, seed=3)


class TestReport:
    def test_merge(self):
        a = DriftAuditReport(states=3, entropy_excess=-0.5)
        b = DriftAuditReport(states=4, entropy_excess=-0.1, step_excess=1.0)
        m = a.merge(b)
        assert m.states == 7 and m.entropy_excess == -0.1 and not m.ok

    def test_empty_report_is_ok(self):
        assert DriftAuditReport().ok


def test_step_change_on_bsc(bsc01, bsc01_info):
    # on a BSC every log-odds move is exactly +-ln 9 or 0 when the leader is fixed
    s = init_uniform(4)
    enc = EncoderMap(np.array([0, 1, 1, 0]))
    after = bayes_update(s, enc, bsc01, 0)
    d = max_step_change(StepRecord(0, 0, 1, -1, s, enc, 0, after))
    assert 0 < d <= bsc01_info.C2 + 1e-12
