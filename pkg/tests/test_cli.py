import json
from pathlib import Path

import pytest
import yaml

from seegame.cli import run
from seegame.config import ConfigError, fmt, parse_config, to_csv, write_atomic
from seegame.game_core import toy3

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
GOLDEN = Path(__file__).parent / "golden"


def _read_all(directory: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


def test_enumerate_matches_golden_files(tmp_path):
    assert run(["enumerate", str(CONFIGS / "toy3.yaml"), "--output-dir", str(tmp_path)]) == 0
    assert _read_all(tmp_path) == _read_all(GOLDEN / "enumerate_toy3")


@pytest.mark.parametrize("command", ["solve", "enumerate", "refine", "hierarchy", "simulate"])
def test_runs_are_byte_identical(tmp_path, command):
    cfg = str(CONFIGS / "toy3_table.yaml")
    assert run([command, cfg, "--output-dir", str(tmp_path / "a")]) == 0
    assert run([command, cfg, "--output-dir", str(tmp_path / "b")]) == 0
    a, b = _read_all(tmp_path / "a"), _read_all(tmp_path / "b")
    assert a and a == b


def test_table_config_reproduces_builtin_fixture():
    cfg = parse_config((CONFIGS / "toy3_table.yaml").read_text())
    assert cfg.model.fingerprint() == toy3(0.1)[0].fingerprint()
    assert cfg.find_threshold and cfg.horizon == 20


def test_refine_with_all_states_viable_keeps_every_equilibrium(tmp_path):
    cfg = tmp_path / "all.yaml"
    cfg.write_text("model:\n  type: table\n  discount: 0.5\n  states: [0, 1]\n  leader_actions: [[0], [0]]\n"
                   "  follower_actions: [[0, 1], [0, 1]]\n  transition_formula: 'e'\n  payoff_x_formula: 's'\n"
                   "  viability: [0, 1]\n")
    assert run(["refine", str(cfg), "--output-dir", str(tmp_path / "out")]) == 0
    doc = yaml.safe_load((tmp_path / "out" / "refinement.yaml").read_text())
    assert doc["stages"]["viable"] == doc["stages"]["mpe"]
    assert len(doc["stages"]["mpe"]) == 4
    rows = (tmp_path / "out" / "eliminations.csv").read_text().splitlines()
    assert rows[0] == "eliminated,dominator,state,margin,seed"
    assert len(rows) == 4


def test_refine_records_threshold_and_seed(tmp_path):
    assert run(["refine", str(CONFIGS / "toy3_table.yaml"), "--output-dir", str(tmp_path), "--seed", "7"]) == 0
    doc = yaml.safe_load((tmp_path / "refinement.yaml").read_text())
    assert doc["seed"] == 7
    assert 0 < doc["threshold"]["value"] < doc["threshold"]["analytic_bound"]
    assert doc["selected"]["id"] == "L001/F0|00|00"
    for name in ("values.csv", "eliminations.csv"):
        lines = (tmp_path / name).read_text().splitlines()
        assert lines[0].endswith(",seed")
        assert all(line.endswith(",7") for line in lines[1:])


def test_missing_discount_names_the_key(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("model:\n  type: toy3\nrun:\n  seed: 1\n")
    code = run(["solve", str(cfg), "--output-dir", str(tmp_path / "out")])
    assert code == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "ConfigError"
    assert "discount" in record["message"]
    assert record["line"] == 1


def test_parse_errors_cite_line_and_key():
    with pytest.raises(ConfigError) as info:
        parse_config("model:\n  type: toy3\n  discount: [0.5\n")
    assert info.value.line is not None
    with pytest.raises(ConfigError) as info:
        parse_config("model:\n  type: toy3\n  discount: 0.5\nrun:\n  tol: -1.0\n")
    assert info.value.key == "run.tol" and info.value.line == 5
    with pytest.raises(ConfigError) as info:
        parse_config("model:\n  type: toy3\n  discount: 0.5\nrun:\n  colour: red\n")
    assert info.value.key == "run.colour"
    with pytest.raises(ConfigError) as info:
        parse_config("model:\n  type: table\n  discount: 0.5\n  states: [0]\n  leader_actions: [[0]]\n"
                     "  follower_actions: [[0]]\n  transitions:\n    - [0, 0, 0, {0: 0.5}]\n")
    assert info.value.key == "model.transitions[0]" and info.value.line == 8
    with pytest.raises(ConfigError, match="unknown model type"):
        parse_config("model:\n  type: lattice\n")
    with pytest.raises(ConfigError, match="hegemon-client"):
        parse_config("model:\n  type: hc\n  discount: 0.9\n  params:\n    omega: 1\n")


def test_flag_validation_and_budget_errors(tmp_path, capsys):
    cfg = str(CONFIGS / "toy3.yaml")
    assert run(["solve", cfg, "--tol", "0", "--output-dir", str(tmp_path)]) == 2
    assert "--tol" in capsys.readouterr().err
    assert run(["enumerate", cfg, "--budget", "5", "--output-dir", str(tmp_path)]) == 3
    record = json.loads(capsys.readouterr().err)
    assert record["error"] == "BudgetExceededError"


def test_solve_reports_nonconvergence(tmp_path, capsys):
    cfg = tmp_path / "toy.yaml"
    cfg.write_text("model:\n  type: toy3\n  discount: 0.9\n")
    assert run(["solve", str(cfg), "--output-dir", str(tmp_path / "o")]) == 4
    assert json.loads(capsys.readouterr().err)["error"] == "ConvergenceError"


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SEEGAME_OUTPUT_DIR", str(tmp_path / "env"))
    assert run(["enumerate", str(CONFIGS / "toy3.yaml")]) == 0
    assert (tmp_path / "env" / "equilibria.yaml").exists()


def test_help_for_every_subcommand(capsys):
    for command in ("solve", "enumerate", "refine", "hc", "hierarchy", "simulate"):
        with pytest.raises(SystemExit) as info:
            run([command, "--help"])
        assert info.value.code == 0
        assert "--rp-quantifier" in capsys.readouterr().out


def test_simulate_reproducible_for_seed(tmp_path):
    cfg = str(CONFIGS / "toy3_table.yaml")
    assert run(["simulate", cfg, "--output-dir", str(tmp_path), "--horizon", "5", "--start", "2"]) == 0
    rows = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert rows[0] == "t,state,label,leader,effort,u_x,u_e,seed"
    assert [r.split(",")[1] for r in rows[1:]] == ["2", "1", "1", "1", "1"]


def test_number_formatting_and_atomic_write(tmp_path):
    assert fmt(0.1 + 0.2) == "0.3"
    assert fmt(-0.0) == "0"
    assert fmt(1 / 3) == "0.333333333333"
    assert to_csv(["a"], [[2 / 3]]) == "a\n0.666666666667\n"
    target = tmp_path / "sub" / "f.txt"
    write_atomic(target, "x")
    assert target.read_text() == "x"
    assert [p.name for p in target.parent.iterdir()] == ["f.txt"]
