import json

import pytest

from vlfsim.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, EXIT_VIOLATION, main
from vlfsim.harness import CSV_COLUMNS


@pytest.fixture
def bsc_file(tmp_path):
    path = tmp_path / "bsc.json"
    path.write_text(json.dumps({"transition": [[0.9, 0.1], [0.1, 0.9]]}))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestChannelCommands:
    def test_info(self, capsys, bsc_file):
        code, out, _ = run(capsys, "info", bsc_file)
        rec = json.loads(out)
        assert code == EXIT_OK
        assert rec["B"] == pytest.approx(1.7577796618689758)
        assert rec["C"] == pytest.approx(0.3680642071684971, abs=1e-9)

    def test_capacity(self, capsys, bsc_file):
        code, out, _ = run(capsys, "capacity", bsc_file, "--tol", "1e-12")
        assert code == EXIT_OK
        assert json.loads(out)["C_nats"] == pytest.approx(0.3680642071684971, abs=1e-10)

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "info", str(tmp_path / "nope.json"))
        assert code == EXIT_CONFIG and "error" in err

    def test_bad_matrix(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"transition": [[0.5, 0.6], [0.1, 0.9]]}))
        assert run(capsys, "info", str(path))[0] == EXIT_CONFIG


class TestSimulate:
    def test_csv_to_stdout(self, capsys, bsc_file):
        code, out, _ = run(capsys, "simulate", "--channel", bsc_file, "--N-grid", "40", "--M", "4",
                           "--trials", "300", "--mode", "theory", "--workers", "1")
        assert code == EXIT_OK
        lines = out.splitlines()
        assert lines[0].split(",") == CSV_COLUMNS and len(lines) == 2

    def test_file_and_md_curve(self, capsys, bsc_file, tmp_path):
        out = tmp_path / "res.csv"
        code, _, _ = run(capsys, "simulate", "--channel", bsc_file, "--N-grid", "40,60", "--M", "4",
                         "--trials", "300", "--mode", "theory", "--workers", "1", "--out", str(out))
        assert code == EXIT_OK and out.exists()
        code, table, _ = run(capsys, "md-curve", "--in", str(out))
        assert code == EXIT_OK
        assert table.splitlines()[0].startswith("N,rho_eff,md_ratio")
        assert len(table.splitlines()) == 3

    def test_jsonl(self, capsys, bsc_file):
        code, out, _ = run(capsys, "simulate", "--channel", bsc_file, "--N-grid", "40", "--M", "4",
                           "--trials", "300", "--mode", "theory", "--workers", "1", "--format", "jsonl")
        assert code == EXIT_OK and json.loads(out)["M"] == 4

    def test_config_error(self, capsys, bsc_file):
        code, _, _ = run(capsys, "simulate", "--channel", bsc_file, "--N-grid", "40", "--trials", "0")
        assert code == EXIT_CONFIG

    def test_infeasible(self, capsys, bsc_file):
        code, _, err = run(capsys, "simulate", "--channel", bsc_file, "--N-grid", "200", "--trials", "200",
                           "--mode", "theory")
        assert code == EXIT_INFEASIBLE and "small-M" in err


class TestLabCommands:
    def test_walk_bound_respected(self, capsys):
        code, out, _ = run(capsys, "walk", "--regime", "up-then-down", "--k1", "0.5", "--k2", "0.4",
                           "--k3", "1", "--T0", "20", "--T", "0", "--trials", "2000")
        assert code == EXIT_OK and json.loads(out)["bound_respected"] is True

    def test_walk_bad_spec(self, capsys):
        code, _, _ = run(capsys, "walk", "--k1", "2", "--k2", "0.4", "--k3", "1", "--T", "5")
        assert code == EXIT_CONFIG

    def test_audit(self, capsys, bsc_file):
        code, out, _ = run(capsys, "audit", "--channel", bsc_file, "--L-grid", "100,1000")
        recs = [json.loads(x) for x in out.splitlines()]
        assert code == EXIT_OK and len(recs) == 2 and all(r["holds"] for r in recs)

    def test_roots(self, capsys):
        code, out, _ = run(capsys, "roots", "--B", "1.7577796618689758", "--C", "0.3680642071684971", "--b", "3")
        rec = json.loads(out)
        assert code == EXIT_OK and rec["a"] < rec["A"] and rec["residual"] < 1e-10

    def test_roots_below_critical(self, capsys):
        assert run(capsys, "roots", "--B", "1.7", "--C", "0.3", "--b", "0")[0] == EXIT_CONFIG

    def test_drift_audit(self, capsys, bsc_file):
        code, out, _ = run(capsys, "drift-audit", "--channel", bsc_file, "--states", "300")
        rec = json.loads(out)
        assert code == EXIT_OK and rec["ok"] and rec["states"] == 300


def test_violation_code_is_distinct():
    assert len({EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_VIOLATION}) == 4
