"""Command-line interface: subcommands, outputs and exit codes."""

import json
import subprocess
import sys

import pytest

from switchadjust.cli import EXIT_CONFIG, EXIT_FIT, EXIT_IO, main
from switchadjust.simulate import CSV_COLUMNS, ORACLE_COLUMNS


@pytest.fixture
def datasets(tmp_path):
    out = tmp_path / "data"
    assert main(["simulate", "--scenario", "1", "--condition", "B", "--seed", "17", "--out", str(out)]) == 0
    return out


class TestSimulate:
    def test_writes_schema(self, datasets):
        for name, n in (("rct.csv", 501), ("external.csv", 201)):
            lines = (datasets / name).read_text().splitlines()
            assert lines[0] == ",".join(CSV_COLUMNS)
            assert len(lines) == n

    def test_same_seed_same_bytes(self, datasets, tmp_path):
        again = tmp_path / "again"
        main(["simulate", "--scenario", "1", "--condition", "B", "--seed", "17", "--out", str(again)])
        assert (again / "rct.csv").read_bytes() == (datasets / "rct.csv").read_bytes()

    def test_omit_oracle(self, tmp_path):
        main(["simulate", "--scenario", "2", "--seed", "1", "--out", str(tmp_path), "--omit-oracle-cols"])
        header = (tmp_path / "rct.csv").read_text().splitlines()[0].split(",")
        assert not set(ORACLE_COLUMNS) & set(header)

    def test_config_overrides(self, tmp_path):
        cfg = tmp_path / "o.cfg"
        cfg.write_text("n_rct = 30\nn_external = 10\n")
        main(["simulate", "--scenario", "1", "--seed", "1", "--out", str(tmp_path), "--config", str(cfg)])
        assert len((tmp_path / "rct.csv").read_text().splitlines()) == 31

    def test_bad_config(self, tmp_path, capsys):
        cfg = tmp_path / "o.cfg"
        cfg.write_text("sample_size = 30\n")
        code = main(["simulate", "--scenario", "1", "--seed", "1", "--out", str(tmp_path), "--config", str(cfg)])
        assert code == EXIT_CONFIG
        assert "unknown" in capsys.readouterr().err


class TestTruth:
    def test_preset(self, capsys):
        assert main(["truth", "--scenario", "1", "--tstar", "5000"]) == 0
        assert float(capsys.readouterr().out) == pytest.approx(472.75, abs=0.5)

    def test_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "s.cfg"
        cfg.write_text("enddate = 546\n")
        assert main(["truth", "--config", str(cfg)]) == 0
        assert float(capsys.readouterr().out) == pytest.approx(368.60, abs=0.5)

    def test_missing_file(self, tmp_path):
        assert main(["truth", "--config", str(tmp_path / "nope.cfg"), "--tstar", "10"]) == EXIT_IO


class TestAdjust:
    @pytest.mark.parametrize("method", ["itt", "oracle", "tse", "atse", "eca"])
    def test_methods(self, datasets, method, capsys, tmp_path):
        out = tmp_path / method
        code = main(["adjust", "--method", method, "--rct", str(datasets / "rct.csv"),
                     "--external", str(datasets / "external.csv"), "--c", "4", "--tstar", "5000",
                     "--out", str(out)])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["method"] == method and 0 < doc["control_rmst"] <= 5000
        assert (out / "adjusted.csv").read_text().startswith("id,arm,time,status,weight\n")
        assert json.loads((out / "diagnostics.json").read_text()) == doc

    def test_bootstrap(self, datasets, capsys):
        code = main(["adjust", "--method", "tse", "--rct", str(datasets / "rct.csv"), "--tstar", "5000",
                     "--bootstrap", "20", "--level", "0.9", "--seed", "3", "--rmst", "km", "--beyond", "extend"])
        assert code == 0
        boot = json.loads(capsys.readouterr().out)["bootstrap"]
        assert boot["B"] == 20 and boot["level"] == 0.9 and boot["lower"] <= boot["upper"]

    def test_oracle_without_oracle_columns(self, tmp_path):
        main(["simulate", "--scenario", "1", "--seed", "2", "--out", str(tmp_path), "--omit-oracle-cols"])
        code = main(["adjust", "--method", "oracle", "--rct", str(tmp_path / "rct.csv"), "--tstar", "5000"])
        assert code == EXIT_CONFIG

    def test_schema_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("id,time\n1,2\n")
        assert main(["adjust", "--method", "itt", "--rct", str(bad), "--tstar", "100"]) == EXIT_CONFIG

    def test_extrapolation_error(self, tmp_path):
        # follow-up ends at day 546 with survivors still at risk
        main(["simulate", "--scenario", "5", "--seed", "3", "--out", str(tmp_path)])
        code = main(["adjust", "--method", "itt", "--rct", str(tmp_path / "rct.csv"), "--tstar", "900", "--rmst", "km"])
        assert code == EXIT_CONFIG

    def test_fit_failure(self, tmp_path):
        cfg = tmp_path / "o.cfg"
        # nobody progresses before the end date, so the switching model has no events
        cfg.write_text("enddate = 1\nn_rct = 30\n")
        main(["simulate", "--scenario", "1", "--seed", "1", "--out", str(tmp_path), "--config", str(cfg)])
        lines = (tmp_path / "rct.csv").read_text().splitlines()
        header = lines[0].split(",")
        rows = [r.split(",") for r in lines[1:]]
        # mark one control as a progressed switcher with a censored PPS
        r = next(r for r in rows if r[header.index("arm")] == "0")
        r[header.index("ttp_status")] = "1"
        r[header.index("switch")] = "1"
        (tmp_path / "rct.csv").write_text("\n".join([lines[0]] + [",".join(x) for x in rows]) + "\n")
        code = main(["adjust", "--method", "tse", "--rct", str(tmp_path / "rct.csv"), "--tstar", "1"])
        assert code == EXIT_FIT

    def test_missing_file(self, tmp_path):
        assert main(["adjust", "--method", "itt", "--rct", str(tmp_path / "x.csv"), "--tstar", "1"]) == EXIT_IO

    def test_bad_c(self, datasets):
        code = main(["adjust", "--method", "atse", "--rct", str(datasets / "rct.csv"), "--tstar", "5000", "--c", "0"])
        assert code == EXIT_CONFIG


class TestStudy:
    def test_stdout_table(self, capsys):
        assert main(["study", "--reps", "2", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("| Scenario | Method |") and "ATSE (c=8)" in out

    def test_files(self, tmp_path):
        cfg = tmp_path / "s.cfg"
        cfg.write_text("methods = oracle,itt\nconditions = A\nomega = 1.0\n")
        out = tmp_path / "m.csv"
        code = main(["study", "--config", str(cfg), "--reps", "3", "--seed", "2", "--format", "csv", "--out", str(out)])
        assert code == 0
        rows = out.read_text().splitlines()
        assert len(rows) == 3
        oracle, itt = rows[1].split(",")[2:], rows[2].split(",")[2:]
        assert oracle == itt
        assert (tmp_path / "m.raw.csv").exists()

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "s.cfg"
        cfg.write_text("replications = 3\n")
        assert main(["study", "--config", str(cfg)]) == EXIT_CONFIG

    def test_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["study", "--format", "xml"])
        assert info.value.code == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "switchadjust.cli", "truth", "--scenario", "5"],
                          capture_output=True, text=True, check=True)
    assert float(proc.stdout) == pytest.approx(368.6, abs=0.5)
