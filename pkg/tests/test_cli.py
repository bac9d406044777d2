import json
import subprocess
import sys
import time

import pytest

from emsplan.cli import load_manifest, main, resolve_config


def run_cli(*args):
    return main([str(a) for a in args])


def test_simulate_nominal(tmp_path):
    assert run_cli("simulate", "--scenario", "demo_k10", "--out", tmp_path) == 0
    assert (tmp_path / "coverage.csv").exists() and (tmp_path / "mask_grid.txt").exists()
    assert not (tmp_path / "delta_p.csv").exists()


def test_simulate_with_chromosome(tmp_path):
    assert run_cli("simulate", "--scenario", "demo_k10", "--chromosome", "1011000000", "--out", tmp_path) == 0
    lines = (tmp_path / "delta_p.csv").read_text().splitlines()
    assert lines[0] == "x,y,delta_p_db"
    assert min(float(l.split(",")[2]) for l in lines[1:]) >= 0.0


def test_bad_chromosome_length(tmp_path, capsys):
    assert run_cli("simulate", "--scenario", "demo_k10", "--chromosome", "10110", "--out", tmp_path) == 2
    assert "K=10" in capsys.readouterr().err


def test_env_default_out(tmp_path, monkeypatch):
    monkeypatch.setenv("EMSPLAN_OUT", str(tmp_path / "env"))
    assert run_cli("simulate", "--scenario", "synth_k6") == 0
    assert (tmp_path / "env" / "coverage.csv").exists()


def test_missing_scenario(tmp_path):
    assert run_cli("plan", "--scenario", tmp_path / "nope.json", "--out", tmp_path) == 2
    assert run_cli("simulate", "--out", tmp_path) == 2


def test_invalid_scenario_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{}")
    assert run_cli("brute-force", "--scenario", p, "--out", tmp_path) == 2


def test_train_t1(tmp_path):
    assert run_cli("train", "--scenario", "demo_k10", "--T", 1, "--out", tmp_path) == 2


def test_train_too_many(tmp_path):
    assert run_cli("train", "--scenario", "synth_k6", "--T", 65, "--out", tmp_path) == 2


def test_train_byte_identical(tmp_path, capsys):
    for d in ("a", "b"):
        assert run_cli("train", "--scenario", "demo_k10", "--T", 256, "--seed", 5, "--out", tmp_path / d) == 0
    assert (tmp_path / "a" / "surrogate.json").read_bytes() == (tmp_path / "b" / "surrogate.json").read_bytes()
    loo = json.loads((tmp_path / "a" / "loo.json").read_text())
    assert loo["n"] == 256 and loo["rmse"] < loo["target_std"]
    assert "LOO rmse" in capsys.readouterr().out


def test_brute_force_guard(tmp_path):
    assert run_cli("brute-force", "--scenario", "paper_shaped_k20", "--out", tmp_path) == 2
    assert run_cli("plan", "--scenario", "paper_shaped_k20", "--brute-force", "--out", tmp_path) == 2


def test_brute_force(tmp_path):
    assert run_cli("brute-force", "--scenario", "synth_k6", "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "brute_force.json").read_text())
    assert doc["evaluated"] == 64 and len(doc["chromosome"]) == 6


def test_plan_demo(tmp_path, capsys):
    t0 = time.perf_counter()
    assert run_cli("plan", "--config", "oracle_k10", "--brute-force", "--out", tmp_path) == 0
    assert time.perf_counter() - t0 < 60
    doc = json.loads((tmp_path / "plan.json").read_text())
    gap = (doc["true"]["phi"] - doc["brute_force"]["true"]["phi"]) / doc["brute_force"]["true"]["phi"]
    assert doc["relative_gap"] == pytest.approx(gap) and gap >= 0
    for name in ("run_log.csv", "table_one.json", "table_one.txt", "cdf_roi1_optimized.csv",
                 "cdf_roi2_nominal.csv", "delta_p_grid.txt", "manifest.json", "surrogate.json"):
        assert (tmp_path / name).exists(), name
    out = capsys.readouterr().out
    assert "dt_sav = 0.9360" in out


def test_plan_deterministic(tmp_path):
    args = ("plan", "--scenario", "synth_k6", "--T", 32, "--population", 8, "--iterations", 30, "--seed", 3)
    assert run_cli(*args, "--out", tmp_path / "a") == 0
    assert run_cli(*args, "--out", tmp_path / "b", "--threads", 2) == 0
    for name in ("plan.json", "run_log.csv", "surrogate.json"):
        a = (tmp_path / "a" / name).read_text()
        b = (tmp_path / "b" / name).read_text().replace('"n_jobs": 2', '"n_jobs": null')
        assert a == b, name


def test_plan_with_saved_model(tmp_path):
    assert run_cli("train", "--scenario", "synth_k6", "--T", 32, "--out", tmp_path / "m") == 0
    assert run_cli("plan", "--scenario", "synth_k6", "--model", tmp_path / "m" / "surrogate.json",
                   "--population", 8, "--iterations", 10, "--out", tmp_path / "p") == 0
    assert json.loads((tmp_path / "p" / "plan.json").read_text())["training_size"] == 32


def test_report_from_plan(tmp_path):
    assert run_cli("brute-force", "--scenario", "synth_k6", "--out", tmp_path) == 0
    assert run_cli("report", "--scenario", "synth_k6", "--plan", tmp_path / "brute_force.json", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["table_one"]["K"] == 6 and "1" in rep["rois"]
    assert run_cli("report", "--scenario", "synth_k6", "--out", tmp_path) == 2


def test_paper_defaults_manifest():
    m = load_manifest(resolve_config("paper_defaults"))
    g = m.ga
    assert (g.population, g.iterations, g.crossover_prob, g.mutation_prob, g.bit_mutation_prob) == (40, 1000, 0.8, 0.1, 0.01)
    assert m.training_size == 4000


def test_paper_defaults_echoed(tmp_path):
    # the bundled defaults are echoed into the run manifest; T=4000 exceeds 2^6 so the run stops at validation
    assert run_cli("plan", "--config", "paper_defaults", "--scenario", "synth_k6", "--out", tmp_path) == 2
    echo = json.loads((tmp_path / "manifest.json").read_text())
    assert echo["ga"]["population"] == 40 and echo["ga"]["iterations"] == 1000
    assert echo["ga"]["crossover_prob"] == 0.8 and echo["ga"]["mutation_prob"] == 0.1
    assert echo["ga"]["bit_mutation_prob"] == 0.01


def test_bad_manifest(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"ga": {"population": 7}}))
    assert run_cli("plan", "--config", p, "--scenario", "synth_k6", "--out", tmp_path) == 2
    p.write_text(json.dumps({"colour": 1}))
    assert run_cli("plan", "--config", p, "--scenario", "synth_k6", "--out", tmp_path) == 2


def test_console_script_exit_code(tmp_path):
    r = subprocess.run([sys.executable, "-m", "emsplan.cli", "bogus"], capture_output=True)
    assert r.returncode == 2
    r = subprocess.run([sys.executable, "-m", "emsplan.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "emsplan" in r.stdout


def test_runtime_failure_names_stage(tmp_path, capsys):
    bad = tmp_path / "model.json"
    bad.write_text(json.dumps({"format": "something-else"}))
    assert run_cli("plan", "--scenario", "synth_k6", "--model", bad, "--out", tmp_path) == 1
    assert "stage train" in capsys.readouterr().err
