import subprocess
import sys

from contmsg.cli import main


def run_cli(*args):
    return main(list(args))


class TestExitCodes:
    def test_success(self, capsys):
        assert run_cli("run", "pingpong", "--iters", "5") == 0
        assert "round trips" in capsys.readouterr().out

    def test_config_error_bad_scenario(self, capsys):
        assert run_cli("run", "timewarp") == 3
        assert "configuration error" in capsys.readouterr().err

    def test_config_error_bad_value(self, capsys):
        assert run_cli("run", "pingpong", "--iters", "0") == 3

    def test_config_error_missing_roster_file(self, capsys):
        assert run_cli("run", "pingpong", "--roster", "/no/such/file") == 3

    def test_assertion_failure_exit_2(self, monkeypatch, capsys):
        from contmsg import cli
        from contmsg.scenarios import ScenarioResult

        def broken(cfg):
            return ScenarioResult(header=["scenario"], rows=[], ok=False,
                                  summary="forced failure")

        monkeypatch.setitem(cli.RUNNERS, "statecheck", broken)
        assert run_cli("run", "statecheck") == 2


class TestCsvOutput:
    def test_writes_file(self, tmp_path):
        out = tmp_path / "rows.csv"
        assert run_cli("run", "pingpong", "--iters", "4", "--seed", "7",
                       "--csv", str(out)) == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0].startswith("schema,scenario,variant")
        assert len(lines) == 5

    def test_stdout_dash(self, capsys):
        assert run_cli("run", "pingpong", "--iters", "2", "--csv", "-") == 0
        out = capsys.readouterr().out
        assert "schema,scenario" in out

    def test_seed_reproducible_files(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_cli("run", "offload", "--world", "4", "--imbalance", "2.0",
                "--iters", "8", "--seed", "11", "--csv", str(a))
        run_cli("run", "offload", "--world", "4", "--imbalance", "2.0",
                "--iters", "8", "--seed", "11", "--csv", str(b))
        assert a.read_bytes() == b.read_bytes()


class TestScenarioOptions:
    def test_burst_options(self, tmp_path):
        out = tmp_path / "burst.csv"
        assert run_cli("run", "burst", "--K", "4", "--senders", "8",
                       "--variant", "activeset", "--csv", str(out)) == 0
        assert "delay_hist" in out.read_text()

    def test_statecheck_passes(self, capsys):
        assert run_cli("run", "statecheck") == 0
        assert "pass" in capsys.readouterr().out


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "contmsg.cli", "run", "pingpong", "--iters", "2"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "round trips" in proc.stdout
