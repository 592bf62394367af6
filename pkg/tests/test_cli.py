import csv
import json
import subprocess
import sys
from importlib import resources

import numpy as np
import pytest

from causalnash.cli import main
from causalnash.config import bundled_text
from causalnash.entropic_ot import entropy_bound
from conftest import TABLE_DYNAMIC, TABLE_STATIC

COT_DIR = resources.files("causalnash.data").joinpath("cot")


def run(*args):
    """Run the CLI in a fresh interpreter; returns (exit code, stdout, stderr)."""
    p = subprocess.run([sys.executable, "-m", "causalnash.cli", *map(str, args)],
                       capture_output=True, text=True, timeout=600)
    return p.returncode, p.stdout, p.stderr


def write_config(tmp_path, mutate=None, name="game.json"):
    raw = json.loads(bundled_text("congestion"))
    if mutate:
        mutate(raw)
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path


def test_solve_dynamic_writes_labelled_result(tmp_path):
    out = tmp_path / "r.json"
    code, _, _ = run("solve", "congestion", "--mode", "dynamic", "--p", 0.9, "--out", out)
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["mode"] == "dynamic" and doc["schema_version"] == 1
    assert doc["coupling"]["rows"] == ["E,E", "E,N", "N,E", "N,N"]
    assert doc["coupling"]["columns"] == ["Q,Q", "Q,S", "S,Q", "S,S"]
    row = np.array(doc["coupling"]["matrix"][0])
    assert np.abs(row - TABLE_DYNAMIC[0.9][0]).max() < 0.02
    assert doc["certificate"]["converged"]
    assert set(doc["values"]) == {"transport", "energy", "variational", "total_cost"}
    assert doc["config"]["eta"]["markov"]["stay_probability"] == 0.9
    assert {"numpy", "scipy", "causalnash"} <= set(doc["versions"])
    assert "solve_seconds" in doc["timings"]


def test_solve_static_row(tmp_path):
    out = tmp_path / "r.json"
    assert run("solve", "congestion", "--mode", "static", "--p", 0.1, "--out", out)[0] == 0
    doc = json.loads(out.read_text())
    assert np.abs(np.array(doc["coupling"]["matrix"][2]) - TABLE_STATIC[0.1][2]).max() < 0.02
    assert doc["certificate"]["causality_residual"] is None


def test_result_numbers_round_trip(tmp_path):
    out = tmp_path / "r.json"
    assert main(["solve", "congestion", "--p", "0.3", "--out", str(out)]) == 0
    text = out.read_text()
    doc = json.loads(text)
    for v in np.array(doc["coupling"]["matrix"]).reshape(-1):
        assert float(repr(float(v))) == v
    # re-serializing the parsed document gives the same text
    assert json.dumps(doc, indent=2, sort_keys=True) + "\n" == text


def test_trivial_game(tmp_path):
    def zero(d):
        d["cost_f"] = np.zeros((4, 4)).tolist()
        d["energy"] = {"attractive": {"kernel": np.zeros((4, 4)).tolist()}}
    cfg = write_config(tmp_path, zero)
    out = tmp_path / "r.json"
    assert main(["solve", str(cfg), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert np.abs(np.array(doc["nu_hat"]["weights"]) - 0.25).max() < 1e-6
    assert doc["values"]["energy"] == 0.0 and doc["values"]["total_cost"] <= 0.0
    eps = doc["config"]["solver"]["epsilon"]
    assert doc["values"]["transport"] >= -eps * entropy_bound(4, 4)


def test_tolerance_failure_exit_code_still_writes(tmp_path):
    cfg = write_config(tmp_path, lambda d: d["solver"].update(max_iterations=1, step_rule="gradient"))
    out = tmp_path / "r.json"
    code, _, err = run("solve", cfg, "--out", out)
    assert code == 2
    doc = json.loads(out.read_text())
    assert doc["certificate"]["converged"] is False


def test_schema_errors_exit_one(tmp_path):
    cfg = write_config(tmp_path, lambda d: d["solver"].update(epsilon="small"))
    code, _, err = run("solve", cfg, "--out", tmp_path / "r.json")
    assert code == 1 and "solver.epsilon" in err
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_version": 1,\n "horizon": }')
    code, _, err = run("solve", bad)
    assert code == 1 and "line 2 column" in err
    assert run("solve", "congestion", "--mode", "sideways")[0] == 1
    assert run("solve", tmp_path / "missing.json")[0] == 1


def test_sweep_csv(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", "congestion", "--param", "p", "--from", "0", "--to", "1", "--steps", "3",
                 "--metric", "cost_gap", "--jobs", "1", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["p", "cost_gap"]
    assert [float(r[0]) for r in rows[1:]] == [0.0, 0.5, 1.0]
    gaps = [float(r[1]) for r in rows[1:]]
    assert abs(gaps[0]) < 1e-9 and abs(gaps[2]) < 1e-9 and gaps[1] > 0


def test_sweep_parallel_matches_serial(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["sweep", "congestion", "--from", "0.2", "--to", "0.8", "--steps", "3", "--metric", "q1prob"]
    assert main(args + ["--jobs", "1", "--out", str(a)]) == 0
    assert main(args + ["--jobs", "2", "--out", str(b)]) == 0
    assert a.read_text() == b.read_text()


def test_sweep_errors(tmp_path):
    assert run("sweep", "congestion", "--metric", "bogus", "--steps", 2)[0] == 1
    assert run("sweep", "congestion", "--metric", "poa", "--param", "q")[0] == 1
    cfg = write_config(tmp_path, lambda d: d.update(eta={"paths": [0.25] * 4}))
    assert run("sweep", cfg, "--metric", "poa", "--steps", 2)[0] == 1


def cot_args(name, out, *extra):
    return ["cot", "--eta", str(COT_DIR / f"{name}_eta.json"), "--nu", str(COT_DIR / f"{name}_nu.json"),
            "--cost", str(COT_DIR / f"{name}_cost.json"), "--out", str(out), *extra]


@pytest.mark.parametrize("name", ["anticipative", "congestion"])
@pytest.mark.parametrize("eps", ["0.05", "0.01"])
def test_cot_oracle_sandwich(tmp_path, name, eps):
    out = tmp_path / "c.json"
    assert main(cot_args(name, out, "--oracle", "--epsilon", eps)) == 0
    doc = json.loads(out.read_text())
    o = doc["oracle"]
    assert 0 <= o["gap"] + 1e-9 and o["gap"] <= float(eps) * entropy_bound(4, 4) + 1e-6
    assert o["within_bound"]
    if name == "anticipative":
        assert abs(doc["value"] - 0.5) <= float(eps) * entropy_bound(4, 4) + 1e-3
        assert abs(o["lp_value"] - 0.5) < 1e-9


def test_cot_horizon_one_is_plain_transport(tmp_path):
    from causalnash.entropic_ot import SinkhornConfig, sinkhorn
    from causalnash.path_space import PathMeasure, PathSpace
    eta = {"alphabet": ["a", "b", "c"], "horizon": 1, "weights": [0.2, 0.3, 0.5]}
    nu = {"alphabet": ["u", "v"], "horizon": 1, "weights": [0.6, 0.4]}
    f = [[0.0, 1.0], [0.5, 0.2], [1.0, 0.0]]
    for k, v in {"eta": eta, "nu": nu, "cost": {"cost": f}}.items():
        (tmp_path / f"{k}.json").write_text(json.dumps(v))
    out = tmp_path / "c.json"
    assert main(["cot", "--eta", str(tmp_path / "eta.json"), "--nu", str(tmp_path / "nu.json"),
                 "--cost", str(tmp_path / "cost.json"), "--epsilon", "0.1", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    ref = sinkhorn(PathMeasure(PathSpace(3, 1), np.array(eta["weights"])),
                   PathMeasure(PathSpace(2, 1), np.array(nu["weights"])), np.array(f),
                   SinkhornConfig(epsilon=0.1, marginal_tolerance=1e-12))
    assert abs(doc["value"] - ref.primal_value) < 1e-12
    assert doc["basis_size"] == 0


def test_cot_dimension_mismatch(tmp_path):
    (tmp_path / "cost.json").write_text(json.dumps({"cost": [[0, 1], [1, 0]]}))
    code, _, err = run("cot", "--eta", COT_DIR / "anticipative_eta.json", "--nu",
                       COT_DIR / "anticipative_nu.json", "--cost", tmp_path / "cost.json")
    assert code == 1 and "shape" in err
    (tmp_path / "nu.json").write_text(json.dumps({"alphabet": ["0", "1"], "horizon": 3, "weights": [0.125] * 8}))
    code, _, _ = run("cot", "--eta", COT_DIR / "anticipative_eta.json", "--nu", tmp_path / "nu.json",
                     "--cost", COT_DIR / "anticipative_cost.json")
    assert code == 1


def test_verify_is_deterministic_and_rejects_static(tmp_path):
    dyn, sta = tmp_path / "d.json", tmp_path / "s.json"
    assert main(["solve", "congestion", "--out", str(dyn)]) == 0
    assert main(["solve", "congestion", "--mode", "static", "--out", str(sta)]) == 0
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    args = ["verify", "--result", dyn, "--players", 10, 50, "--samples", 2000, "--seed", 4]
    assert run(*args, "--out", a)[0] == 0
    assert run(*args, "--out", b)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    rep = json.loads(a.read_text())["reports"]
    assert [r["N"] for r in rep] == [10, 50]
    assert all(len(r["best_deviation"]) == 4 for r in rep)
    code, _, err = run("verify", "--result", sta, "--players", 10, "--samples", 200, "--seed", 1)
    assert code == 1 and "static" in err
    assert run("verify", "--result", dyn, "--players", 10)[0] == 1  # seed is required


def test_verify_without_mean_field(tmp_path):
    def zero_v(d):
        d["energy"] = {"attractive": {"kernel": np.zeros((4, 4)).tolist()}}
    cfg = write_config(tmp_path, zero_v)
    res = tmp_path / "r.json"
    assert main(["solve", str(cfg), "--out", str(res)]) == 0
    out = tmp_path / "v.json"
    assert main(["verify", "--result", str(res), "--players", "1", "10", "200", "--samples", "5000",
                 "--seed", "0", "--out", str(out)]) == 0
    eps = json.loads(res.read_text())["config"]["solver"]["epsilon"]
    for r in json.loads(out.read_text())["reports"]:
        # Without interaction, the only gain from deviating is the entropic
        # smoothing of the plan, which is at most eps * log(#action paths).
        assert r["gap"] <= eps * np.log(4) + 3 * r["gap_se"]


def test_log_level_from_environment(tmp_path):
    import os
    cfg = write_config(tmp_path, lambda d: d["solver"].update(max_iterations=1, step_rule="gradient"))
    cmd = [sys.executable, "-m", "causalnash.cli", "solve", str(cfg), "--out", str(tmp_path / "r.json")]
    loud = subprocess.run(cmd, capture_output=True, text=True, env=dict(os.environ, CAUSALNASH_LOG="INFO"))
    quiet = subprocess.run(cmd, capture_output=True, text=True, env=dict(os.environ, CAUSALNASH_LOG="ERROR"))
    assert loud.returncode == quiet.returncode == 2
    assert "did not converge" in loud.stderr and "did not converge" not in quiet.stderr
