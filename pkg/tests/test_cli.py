from __future__ import annotations

import csv
import json

import pytest
from click.testing import CliRunner

from shiftsite.cli import main
from shiftsite.config import apply_overrides, parse_config

TOY = {
    "network": "bundled:toy3",
    "scenario": {
        "synth": {"horizon": 12, "load_peak": 120.0, "res_capacity": 150.0, "res_mean": 0.6,
                  "ctrl_peak": [30.0, 10.0], "expansion": 30.0},
        "seed": 1,
    },
    "budget": {"K": 2},
    "search": {"max_rounds": 100},
}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(*args):
    return CliRunner().invoke(main, list(args), catch_exceptions=False)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_baseline_caps(tmp_path):
    cfg = write_config(tmp_path, TOY)
    res = run("baseline", "--config", cfg, "--out", str(tmp_path / "b"))
    assert res.exit_code == 0, res.output
    rows = read_csv(tmp_path / "b" / "caps.csv")
    assert len(rows) == 12
    for r in rows:
        assert float(r["cap"]) == pytest.approx(1.05 * float(r["baseline_cost"]), rel=1e-12)


def test_zero_load_caps(tmp_path):
    cfg = dict(TOY, scenario={"synth": {"horizon": 4, "load_peak": 0.0, "res_capacity": 0.0, "ctrl_peak": 0.0},
                              "seed": 0})
    res = run("baseline", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "b"))
    assert res.exit_code == 0, res.output
    assert all(abs(float(r["cap"])) <= 1e-6 for r in read_csv(tmp_path / "b" / "caps.csv"))


def test_plan_and_report(tmp_path):
    cfg = write_config(tmp_path, TOY)
    out = tmp_path / "p"
    res = run("plan", "--config", cfg, "--out", str(out))
    assert res.exit_code == 0, res.output
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "converged"
    assert rep["z_star"] == [1, 1, 0]
    assert rep["shift_basis"] == {"kind": "star", "hub_bus": "B"}
    m = rep["metrics"]
    assert m["c_ls"] < m["c_opf"] and m["mu_redu"] > 0
    assert m["shifted"] <= m["allowed"]
    series = rep["emission_series"]
    dt = rep["config"]["scenario"].get("dt_hours", 1.0)
    assert m["mu_redu"] == pytest.approx(1 - sum(series["ls"]) * dt / (sum(series["opf"]) * dt), abs=1e-9)
    for name in ("emissions.csv", "trace.csv", "tree.json", "timing.json", "baseline.csv", "caps.csv"):
        assert (out / name).exists()
    res = run("report", str(out))
    assert res.exit_code == 0, res.output
    assert "mu_redu" in res.output
    assert (out / "metrics.csv").exists() and (out / "convergence.csv").exists()


def test_plan_matches_enumeration(tmp_path):
    cfg = write_config(tmp_path, TOY)
    assert run("plan", "--config", cfg, "--out", str(tmp_path / "p")).exit_code == 0
    res = run("enumerate", "--config", cfg, "--out", str(tmp_path / "e"))
    assert res.exit_code == 0, res.output
    oracle = json.loads((tmp_path / "e" / "oracle.json").read_text())
    rep = json.loads((tmp_path / "p" / "report.json").read_text())
    assert oracle["evaluated_count"] == 3
    assert oracle["best_z"] == rep["z_star"]
    assert oracle["best_objective"] == pytest.approx(rep["metrics"]["c_ls"], rel=1e-9)


def test_same_seed_same_bytes(tmp_path):
    cfg = write_config(tmp_path, TOY)
    for d in ("a", "b"):
        assert run("plan", "--config", cfg, "--seed", "3", "--out", str(tmp_path / d)).exit_code == 0
    for name in ("report.json", "trace.csv", "tree.json", "emissions.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_wall_budget_gives_best_so_far(tmp_path):
    cfg = dict(TOY, network="bundled:ieee14", budget={"K": 5},
               scenario={"synth": {"horizon": 24, "load_peak": 259.0, "res_capacity": 90.0, "res_mean": 0.6,
                                   "ctrl_peak": 8.0, "expansion": 25.0}, "seed": 7},
               search={"max_rounds": 100000})
    out = tmp_path / "t"
    res = run("plan", "--config", write_config(tmp_path, cfg), "--time-budget", "1", "--out", str(out))
    assert res.exit_code == 0, res.output
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "budget_exhausted" and rep["search"]["converged"] is False
    assert sum(rep["z_star"]) == 5 and rep["metrics"]["c_ls"] is not None


def test_zero_expansion(tmp_path):
    cfg = json.loads(json.dumps(TOY))
    cfg["scenario"]["synth"]["expansion"] = 0.0
    cfg["scenario"]["synth"]["ctrl_peak"] = 0.0
    out = tmp_path / "z"
    assert run("plan", "--config", write_config(tmp_path, cfg), "--out", str(out)).exit_code == 0
    m = json.loads((out / "report.json").read_text())["metrics"]
    assert m["shifted"] == pytest.approx(0.0, abs=1e-9)
    assert m["mu_shift"] == "undefined"
    assert m["delta_shift"] == pytest.approx(0.0, abs=1e-6 * m["c_ns"])


def test_infeasible_baseline_writes_diagnosis(tmp_path):
    net = {
        "buses": 2,
        "lines": [{"from": 0, "to": 1, "susceptance": 1.0, "limit": 0.001}],
        "generators": [{"bus": 0, "p_max": 100.0, "emission_b": 1.0, "cost": 10.0}],
        "ctrl_loads": [1],
    }
    (tmp_path / "net.json").write_text(json.dumps(net))
    cfg = {"network": "net.json", "scenario": {"synth": {"horizon": 3, "load_peak": 50.0, "res_capacity": 0.0}},
           "budget": {"K": 1}}
    out = tmp_path / "x"
    res = CliRunner().invoke(main, ["plan", "--config", write_config(tmp_path, cfg), "--out", str(out)])
    assert res.exit_code == 2
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "no_feasible_plan" and "infeasible" in rep["diagnosis"]


def test_exit_codes(tmp_path):
    cfg = write_config(tmp_path, TOY)
    runner = CliRunner()
    res = runner.invoke(main, ["enumerate", "--config", cfg, "--limit", "2", "--out", str(tmp_path / "e")])
    assert res.exit_code == 4
    bad = write_config(tmp_path, dict(TOY, caps_factor=0.5), "bad.json")
    assert runner.invoke(main, ["plan", "--config", bad, "--out", str(tmp_path / "q")]).exit_code == 3
    assert runner.invoke(main, ["report", str(tmp_path)]).exit_code == 3
    unknown = write_config(tmp_path, dict(TOY, colour="red"), "unknown.json")
    assert runner.invoke(main, ["baseline", "--config", unknown, "--out", str(tmp_path / "u")]).exit_code == 3


def test_synth_command(tmp_path):
    cfg = write_config(tmp_path, TOY)
    res = run("synth", "--config", cfg, "--out", str(tmp_path / "s.csv"))
    assert res.exit_code == 0, res.output
    rows = read_csv(tmp_path / "s.csv")
    assert len(rows) == 12 and "load_A" in rows[0]
    # the written file drives a run just like the generator section
    cfg2 = dict(TOY, scenario={"file": "s.csv", "expansion": 30.0})
    res = run("baseline", "--config", write_config(tmp_path, cfg2, "file.json"), "--out", str(tmp_path / "f"))
    assert res.exit_code == 0, res.output


def test_override_precedence(tmp_path):
    cfg = parse_config(dict(TOY, workers=2, out="cfg-out"), str(tmp_path))
    env = {"SHIFTSITE_OUT": "env-out", "SHIFTSITE_WORKERS": "3"}
    merged = apply_overrides(cfg, env=env)
    assert merged.out == "env-out" and merged.workers == 3
    assert apply_overrides(cfg, out="flag-out", env=env).out == "flag-out"
    assert apply_overrides(cfg, env={}).out == str(tmp_path / "cfg-out")
    assert apply_overrides(cfg, seed=9, rounds=5, env={}).search.seed == 9


@pytest.mark.slow
def test_bundled_case6_plan_matches_oracle(tmp_path, bundled_configs):
    from importlib import resources

    cfg = str(resources.files("shiftsite") / "data" / "configs" / "case6.json")
    assert run("plan", "--config", cfg, "--out", str(tmp_path / "p")).exit_code == 0
    assert run("enumerate", "--config", cfg, "--out", str(tmp_path / "e")).exit_code == 0
    rep = json.loads((tmp_path / "p" / "report.json").read_text())
    oracle = json.loads((tmp_path / "e" / "oracle.json").read_text())
    assert rep["metrics"]["mu_redu"] > 0
    assert rep["metrics"]["shifted"] <= rep["metrics"]["allowed"]
    assert rep["z_star"] == oracle["best_z"]


@pytest.mark.slow
def test_ieee14_pairs_enumerated(tmp_path):
    cfg = {
        "network": "bundled:ieee14",
        "scenario": {"synth": {"horizon": 24, "load_peak": 259.0, "res_capacity": 90.0, "res_mean": 0.6,
                               "ctrl_peak": 8.0, "expansion": 25.0}, "seed": 7},
        "budget": {"K": 2},
        "workers": 4,
    }
    res = run("enumerate", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "e"))
    assert res.exit_code == 0, res.output
    assert json.loads((tmp_path / "e" / "oracle.json").read_text())["evaluated_count"] == 91
