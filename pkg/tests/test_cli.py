import json

import pytest

from seqdm.cli import EXIT_FAILED, EXIT_INVALID, EXIT_OK, build_parser, main
from seqdm.harness import OUTPUT_DIR_ENV
from seqdm.scenarios import SCENARIOS

ETC = {"seed": 1, "replications": 1, "T": 300, "instance": {"means": [0.5, 0.7]},
       "algorithm": {"name": "etc", "m": 30}}


@pytest.fixture
def etc_config(tmp_path):
    p = tmp_path / "etc.json"
    p.write_text(json.dumps(ETC))
    return p


class TestExperimentCommands:
    def test_bandit_writes_regret_and_summary(self, etc_config, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["bandit", "--config", str(etc_config), "--seed", "7", "--output-dir", str(out)]) == EXIT_OK
        lines = (out / "regret.csv").read_text().splitlines()
        assert len(lines) == 1 + ETC["T"]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["aggregate"]["n"] == 1
        assert capsys.readouterr().out.count("\n") == 1

    def test_seed_override(self, tmp_path):
        # ETC exploration regret is seed-free, so use UCB to see the seed
        p = tmp_path / "ucb.json"
        p.write_text(json.dumps(dict(ETC, algorithm={"name": "ucb"})))
        main(["bandit", "--config", str(p), "--seed", "7", "--output-dir", str(tmp_path / "a")])
        main(["bandit", "--config", str(p), "--seed", "8", "--output-dir", str(tmp_path / "b")])
        assert (tmp_path / "a" / "regret.csv").read_bytes() != (tmp_path / "b" / "regret.csv").read_bytes()

    def test_jsonl_format(self, etc_config, tmp_path):
        assert main(["bandit", "--config", str(etc_config), "--format", "jsonl", "--output-dir", str(tmp_path)]) == 0
        assert (tmp_path / "regret.jsonl").exists()

    def test_env_output_dir(self, etc_config, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
        assert main(["bandit", "--config", str(etc_config)]) == EXIT_OK
        assert (tmp_path / "env" / "summary.json").exists()

    def test_missing_config_names_path(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        assert main(["bandit", "--config", str(missing)]) == EXIT_INVALID
        assert str(missing) in capsys.readouterr().err

    def test_invalid_config_reports_field(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(dict(ETC, instance={"means": [0.5, 1.2]})))
        assert main(["bandit", "--config", str(p)]) == EXIT_INVALID
        assert "$.instance.means[1]" in capsys.readouterr().err

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{")
        assert main(["bandit", "--config", str(p)]) == EXIT_INVALID

    def test_experiment_mismatch(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(dict(ETC, experiment="search")))
        assert main(["bandit", "--config", str(p)]) == EXIT_INVALID

    def test_experiment_failure_exits_one(self, tmp_path):
        # the terminal pair is unreachable within one step from the start state
        p = tmp_path / "mpc.json"
        p.write_text(json.dumps({"seed": 0, "T": 5, "instance": {"kind": "machine_repair"},
                                 "algorithm": {"horizon": 1, "terminal": [0, 0], "x0": 9}}))
        assert main(["mpc", "--config", str(p), "--output-dir", str(tmp_path / "o")]) == EXIT_FAILED


class TestParser:
    def test_unknown_flag(self, etc_config):
        assert main(["bandit", "--config", str(etc_config), "--colour"]) == EXIT_INVALID

    def test_no_subcommand(self):
        assert main([]) == EXIT_INVALID

    def test_config_required(self):
        assert main(["lqr"]) == EXIT_INVALID

    def test_bad_format(self, etc_config):
        assert main(["bandit", "--config", str(etc_config), "--format", "xml"]) == EXIT_INVALID

    def test_help_exits_zero(self):
        assert main(["--help"]) == EXIT_OK

    def test_subcommands(self):
        choices = build_parser()._subparsers._group_actions[0].choices
        assert set(choices) == {"mdp", "lqr", "lqg", "mpc", "bandit", "search", "repro"}


class TestRepro:
    def test_newton_gain(self, capsys):
        assert main(["repro", "newton-gain"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "PASS" in out and "K=[2.,3.]" in out

    def test_writes_details(self, tmp_path):
        assert main(["repro", "shift-register-fragility", "--output-dir", str(tmp_path)]) == EXIT_OK
        doc = json.loads((tmp_path / "shift-register-fragility.json").read_text())
        assert doc["passed"] and doc["criterion"] == 2

    def test_list(self, capsys):
        assert main(["repro", "--list"]) == EXIT_OK
        assert capsys.readouterr().out.split() == list(SCENARIOS)

    def test_unknown_scenario(self):
        assert main(["repro", "no-such-thing"]) == EXIT_INVALID

    def test_name_or_all_required(self):
        assert main(["repro"]) == EXIT_INVALID

    def test_one_scenario_per_criterion(self):
        assert len(SCENARIOS) == 14
