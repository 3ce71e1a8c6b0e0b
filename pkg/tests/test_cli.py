import pytest

from pacfl.cli import build_parser, main


class TestCli:
    def test_check_subset(self, capsys):
        assert main(["check", "payload", "physical", "overhead"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert len(out) == 3 and all(line.startswith("PASS") for line in out)

    def test_unknown_check(self, capsys):
        assert main(["check", "nonsense"]) == 2
        assert "unknown checks" in capsys.readouterr().err

    def test_bound_check(self, capsys):
        assert main(["bound-check", "--instances", "50"]) == 0
        assert capsys.readouterr().out.startswith("PASS kl_bound")

    def test_run_and_hvi(self, tmp_path, capsys):
        out = tmp_path / "runs"
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("rounds: 2\neval_episodes: 1\n")
        assert main(["run", "--policy", "fixed", "--config", str(cfg), "--episodes", "1", "--out", str(out)]) == 0
        assert main(["run", "--policy", "uniform_q", "--config", str(cfg), "--seeds", "0..1", "--episodes", "1", "--out", str(out)]) == 0
        capsys.readouterr()
        assert main(["hvi", "--runs", str(out), "--out", str(tmp_path / "summary.csv")]) == 0
        table = (tmp_path / "summary.csv").read_text().splitlines()
        assert table[0].startswith("policy,runs") and len(table) == 3

    def test_compare_rejects_unknown_policy(self, capsys):
        assert main(["compare", "--policies", "pac,nope", "--episodes", "0"]) == 2

    def test_bad_config_is_reported(self, tmp_path, capsys):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("q_min: 1\n")
        assert main(["run", "--policy", "fixed", "--config", str(cfg)]) == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_missing_runs_dir(self, tmp_path, capsys):
        assert main(["hvi", "--runs", str(tmp_path / "none")]) == 1

    def test_every_scenario_has_a_subcommand(self):
        parser = build_parser()
        for cmd in ("run", "compare", "hvi", "tabular-verify", "bound-check", "gradcheck", "check"):
            assert parser.parse_args([cmd] + (["--runs", "x"] if cmd == "hvi" else []))
