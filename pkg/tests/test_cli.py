import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from qcrlab import cli
from qcrlab.adaptive_sim import MseReport
from qcrlab.errors import ConfigError, DegenerateModel, IoError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def _report(n, v):
    return MseReport(n, 100, np.array([[v]]), v, 0.1 * v, 1.2345678901234567, 1.1, None)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_example_configs_parse(path):
    cfg = cli.load_config(path)
    assert cfg.command in cli.COMMANDS
    cli._Setup(cfg)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_example_configs_validate(path, tmp_path, capsys):
    assert cli.main(["validate", "-c", str(path), "--out-dir", str(tmp_path)]) == 0
    assert "config OK" in capsys.readouterr().out


def test_bound_command(tmp_path, capsys):
    code = cli.main(["-c", str(CONFIGS / "bound.yaml"), "--out-dir", str(tmp_path), "--set", "solver.restarts=2"])
    assert code == 0
    out = capsys.readouterr().out
    assert "C_theta(G) = 1.2345" in out and "SLD floor = 1.234568" in out
    doc = json.loads((tmp_path / "result.json").read_text())
    assert set(doc) == {"version", "numeric_policy", "config_echo", "results", "diagnostics"}
    assert doc["results"]["value"] == pytest.approx(1 / 0.81, abs=1e-3)
    assert doc["config_echo"]["solver"]["restarts"] == 2
    assert (tmp_path / "table.csv").exists()


def test_fisher_command(tmp_path):
    assert cli.main(["-c", str(CONFIGS / "fisher.yaml"), "--out-dir", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "result.json").read_text())
    assert doc["results"]["sld"][0][0] == pytest.approx(0.81)


def test_non_psd_weight_is_config_error(tmp_path, capsys):
    doc = yaml.safe_load((CONFIGS / "validate.yaml").read_text())
    doc["G"] = [[1, 0, 0], [0, -1, 0], [0, 0, 1]]
    assert cli.main(["-c", str(_write(tmp_path, doc))]) == 2
    assert "positive semidefinite" in capsys.readouterr().err


def test_too_few_trials_is_config_error(tmp_path, capsys):
    code = cli.main(["-c", str(CONFIGS / "simulate.yaml"), "--set", "simulation.trials=0",
                     "--out-dir", str(tmp_path)])
    assert code == 2
    assert "simulation.trials" in capsys.readouterr().err


@pytest.mark.parametrize("patch,field", [
    ({"theta": [0.3, 0.1]}, "theta"),
    ({"theta": [5.0]}, "theta"),
    ({"model": {"name": "nope"}}, "model.name"),
    ({"colour": 1}, "colour"),
    ({"solver": {"restart": 3}}, "solver.restart"),
    ({"simulation": {"trails": 3}}, "simulation.trails"),
    ({"command": "frobnicate"}, "command"),
])
def test_schema_errors_name_the_field(tmp_path, patch, field):
    doc = yaml.safe_load((CONFIGS / "bound.yaml").read_text())
    doc.update(patch)
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        cli._Setup(cli.load_config(_write(tmp_path, doc)))


def test_missing_config_file(tmp_path):
    assert cli.main(["-c", str(tmp_path / "absent.yaml")]) == 2


def test_numerical_error_exit_code(tmp_path, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise DegenerateModel("singular")

    monkeypatch.setattr(cli, "cr_bound", boom)
    assert cli.main(["-c", str(CONFIGS / "bound.yaml"), "--out-dir", str(tmp_path)]) == 3
    assert "DegenerateModel" in capsys.readouterr().err


def test_overrides():
    doc = cli.apply_overrides({"a": {"b": 1}}, ["a.b=2", "a.c=[1, 2]", "d.e=x"])
    assert doc == {"a": {"b": 2, "c": [1, 2]}, "d": {"e": "x"}}
    with pytest.raises(ConfigError):
        cli.apply_overrides({}, ["novalue"])


def test_study_table_round_trip(tmp_path):
    reports = [_report(1024, 1 / 3), _report(256, 2 / 3)]
    path = cli.emit_study_table(reports, tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(cli.TABLE_COLUMNS)
    rows = cli.read_study_table(path)
    assert [r["n"] for r in rows] == [256, 1024]
    assert rows[1]["trace_mse"] == 1 / 3
    assert rows[1]["n_trace_mse"] == 1024 / 3
    assert rows[0]["c_bound"] == 1.2345678901234567
    assert rows[0]["n_cn_bound"] is None


def test_study_table_single_report(tmp_path):
    path = cli.emit_study_table([_report(64, 0.5)], tmp_path / "t.csv")
    assert len(path.read_text().splitlines()) == 2


def test_study_table_unwritable(tmp_path):
    with pytest.raises(IoError):
        cli.emit_study_table([_report(64, 0.5)], tmp_path / "missing" / "t.csv")


def test_simulate_command_small(tmp_path):
    code = cli.main(["-c", str(CONFIGS / "simulate.yaml"), "--out-dir", str(tmp_path),
                     "--set", "simulation.trials=100", "--set", "simulation.n_grid=[64, 256]",
                     "--set", "solver.restarts=2"])
    assert code == 0
    rows = cli.read_study_table(tmp_path / "table.csv")
    assert [r["n"] for r in rows] == [64, 256]
    assert all(r["c_bound"] == pytest.approx(1 / 0.81, abs=1e-3) for r in rows)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qcrlab", "validate", "-c", str(CONFIGS / "fisher.yaml"),
                           "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "config OK" in proc.stdout
