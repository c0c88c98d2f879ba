import json
import subprocess
import sys

import pytest

from settlesense.cli import fmt, main

SMALL = """\
seed: 7
subset: {n_per_level: 1000}
update: {n_ss_initial: 1000, delta_n_ss: 1000, max_outer_iterations: 2, n_evidence: 20000,
         reciprocal_sim_n: 20000}
soi: {n_dis: 5}
region: {n_grid: [11, 11]}
optimizer: {initial_grid: [3, 3], max_iter: 2, faces: [0.0, -3.0]}
settlement_grid: {n_grid: [5, 7]}
measurements:
  - {location: [10, 10], value: 10}
  - {location: [15, 15], value: 10}
soi_locations: [[10, 10], [15, 15]]
"""

EXPECTED = {
    "settlement-grid": ["settlement_grid.csv"],
    "reliability": ["reliability.csv", "levels.csv"],
    "update": ["update.csv"],
    "soi": ["soi.csv", "soi_readings.csv"],
    "optimize": ["optimize.csv", "optimize_trace.csv"],
    "soi-map": ["soi_map.csv", "soi_map_training.csv", "optimize.csv", "optimize_trace.csv"],
}


@pytest.fixture(scope="module")
def scenario(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "small.yaml"
    p.write_text(SMALL)
    return p


def run(command, scenario, out, *extra):
    return main([command, "--scenario", str(scenario), "--out", str(out), *extra])


def test_fmt_six_significant_digits():
    assert fmt(1.23456789e-5) == "1.23457e-05"
    assert fmt(19.61734) == "19.6173"
    assert fmt(-0.0) == "0"
    assert fmt(3) == "3" and fmt(True) == "true" and fmt(float("nan")) == "nan"


@pytest.mark.parametrize("command", ["settlement-grid", "reliability", "update"])
def test_command_outputs_and_manifest(command, scenario, tmp_path):
    assert run(command, scenario, tmp_path) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["command"] == command
    assert set(EXPECTED[command]) | {"effective_config.yaml"} == set(manifest["outputs"])
    assert "threads" not in json.dumps(manifest)
    for name in EXPECTED[command]:
        assert (tmp_path / name).read_text().count("\n") >= 2


def test_update_rows(scenario, tmp_path):
    assert run("update", scenario, tmp_path) == 0
    lines = (tmp_path / "update.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert header[:10] == ["x", "y", "z", "s_m", "p_f", "p_f_given_z", "r_up", "cov_pf", "cov_pfz", "n_evaluations"]
    assert len(lines) == 3


def test_settlement_grid_values(scenario, tmp_path):
    assert run("settlement-grid", scenario, tmp_path) == 0
    rows = [r.split(",") for r in (tmp_path / "settlement_grid.csv").read_text().splitlines()[1:]]
    assert len(rows) == 35
    assert all(float(r[2]) <= 0 for r in rows)


def test_effective_config_reproduces_run(scenario, tmp_path):
    assert run("reliability", scenario, tmp_path / "a") == 0
    echo = tmp_path / "a" / "effective_config.yaml"
    assert run("reliability", echo, tmp_path / "b") == 0
    assert (tmp_path / "a" / "reliability.csv").read_bytes() == (tmp_path / "b" / "reliability.csv").read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma == mb


def test_config_error_reported_as_json(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("random_model:\n  V_L: {std: -1}\n")
    code = run("update", bad, tmp_path / "out")
    err = json.loads(capsys.readouterr().err.strip())
    assert code == 2 and err["category"] == "config" and "random_model.V_L.std" in err["message"]


def test_compute_error_category(tmp_path, capsys):
    cfg = tmp_path / "deep.yaml"
    cfg.write_text("limit_state: {eps_lim: 50.0}\nsubset: {n_per_level: 1000, max_levels: 2}\n")
    code = run("reliability", cfg, tmp_path / "out")
    err = json.loads(capsys.readouterr().err.strip())
    assert code == 1 and err["category"] == "subset_simulation"


def test_bad_threads_env(scenario, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SETTLE_SENSE_THREADS", "many")
    assert run("settlement-grid", scenario, tmp_path) == 2
    assert json.loads(capsys.readouterr().err)["category"] == "config"


def test_usage_error(capsys):
    assert main(["explode", "--scenario", "x", "--out", "y"]) == 2
    assert json.loads(capsys.readouterr().err)["category"] == "usage"


def test_console_entry_point(scenario, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "settlesense.cli", "settlement-grid", "--scenario", str(scenario),
                           "--out", str(tmp_path), "--json"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "settlement_grid.json").exists()
