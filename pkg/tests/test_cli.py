"""CLI exit codes, output files, and byte-level reproducibility."""

import copy
import json

import numpy as np
import pytest

from switchstab import solve_coupled_riccati
from switchstab.cli import main

from conftest import DESK_MODEL_JSON

SINGLE_MODE_MODEL = {
    "schema_version": "1",
    "generator": [[0.0]],
    "modes": [{"A": [[0.0]], "B": [[1.0]]}],
    "cost": {"Q": [[1.0]], "R": [[1.0]]},
    "simulation": {"T": 1.0, "dt": 1e-3, "seed": 1, "x0": [1.0],
                   "phi0": [1.0], "alpha0": 0},
}

# converges but violates the pairwise condition: opposite strong inputs
CONDITION_VIOLATOR_MODEL = {
    "schema_version": "1",
    "generator": [[-1.0, 1.0], [1.0, -1.0]],
    "modes": [
        {"A": [[-1.0, 0.0], [0.0, -1.0]], "B": [[0.0], [4.0]]},
        {"A": [[-1.0, 0.0], [0.0, -1.0]], "B": [[0.0], [-4.0]]},
    ],
    "cost": {"Q": [[1.0, 0.0], [0.0, 1.0]], "R": [[1.0]]},
    "simulation": {"T": 1.0, "dt": 1e-3, "seed": 2, "x0": [1.0, 0.0],
                   "phi0": [0.5, 0.5]},
}


def write_model(tmp_path, payload, name="model.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def desk_model(tmp_path):
    return write_model(tmp_path, DESK_MODEL_JSON, name="desk.json")


def test_validate_ok(tmp_path, capsys):
    assert main(["validate", desk_model(tmp_path)]) == 0
    assert "OK" in capsys.readouterr().out


def test_validate_names_bad_row(tmp_path, capsys):
    payload = copy.deepcopy(DESK_MODEL_JSON)
    payload["generator"] = [[-1.0, 1.0], [2.0, -1.0]]
    assert main(["validate", write_model(tmp_path, payload)]) == 1
    assert "row 1" in capsys.readouterr().out


def test_validate_names_missing_field(tmp_path, capsys):
    payload = copy.deepcopy(DESK_MODEL_JSON)
    del payload["modes"][1]["B"]
    assert main(["validate", write_model(tmp_path, payload)]) == 1
    assert "modes[1].B" in capsys.readouterr().out


def test_solve_single_mode_trivial(tmp_path):
    out = tmp_path / "out"
    code = main(["solve", write_model(tmp_path, SINGLE_MODE_MODEL),
                 "--out", str(out), "--quiet"])
    assert code == 0
    payload = json.loads((out / "riccati_solution.json").read_text())
    assert payload["P"] == [[[1.0]]]


def test_solve_desk_outputs_round_trip(tmp_path, desk):
    out = tmp_path / "out"
    assert main(["solve", desk_model(tmp_path), "--out", str(out), "--quiet"]) == 0
    payload = json.loads((out / "riccati_solution.json").read_text())
    sol = solve_coupled_riccati(desk.modes, desk.cost, desk.gen)
    assert np.array_equal(np.asarray(payload["P"]), sol.P)
    assert np.array_equal(np.asarray(payload["residuals"]), sol.residuals)
    assert max(payload["residuals"]) <= 1e-10
    condition = json.loads((out / "condition_report.json").read_text())
    assert condition["satisfied"] is True
    gains = json.loads((out / "control_gains.json").read_text())
    assert len(gains["feedback_gains"]) == 2


def test_solve_condition_violation_exits_two(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["solve", write_model(tmp_path, CONDITION_VIOLATOR_MODEL),
                 "--out", str(out)])
    assert code == 2
    condition = json.loads((out / "condition_report.json").read_text())
    assert condition["satisfied"] is False
    assert np.min(condition["pairwise_min_eig"]) < 0.0
    assert "min-eigenvalue" in capsys.readouterr().out


def test_solve_parse_error_exits_one(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("not json")
    assert main(["solve", str(path), "--quiet"]) == 1


def test_simulate_writes_outputs(tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", desk_model(tmp_path), "--paths", "3",
                 "--out", str(out), "--quiet"])
    assert code == 0
    report = json.loads((out / "ensemble_report.json").read_text())
    assert report["num_paths"] == 3
    assert "median" in report["terminal_exponent_quantiles"]
    assert len(report["terminal_exponents"]) == 3
    assert (out / "trajectories" / "path_00000.csv").exists()
    header = (out / "trajectories" / "path_00000.csv").read_text().splitlines()[0]
    assert header == "t,alpha,x_1,x_2,phi_1,phi_2,u_1,N_norm,qv,Ynorm"


def test_simulate_dt_override_larger_than_T_is_usage_error(tmp_path, capsys):
    assert main(["simulate", desk_model(tmp_path), "--dt", "5.0", "--quiet"]) == 64
    assert "usage error" in capsys.readouterr().err


def test_simulate_condition_violator_exits_two(tmp_path):
    code = main(["simulate", write_model(tmp_path, CONDITION_VIOLATOR_MODEL),
                 "--out", str(tmp_path / 'x'), "--quiet"])
    assert code == 2


def test_unknown_flag_is_usage_error(tmp_path):
    assert main(["simulate", desk_model(tmp_path), "--warp", "9"]) == 64


def test_simulate_single_path_rerun_identical_csv(tmp_path):
    model = desk_model(tmp_path)
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["simulate", model, "--paths", "1", "--T", "1.0",
                     "--seed", "5", "--out", str(out), "--quiet"]) == 0
        blobs.append((out / "trajectories" / "path_00000.csv").read_bytes())
        assert json.loads((out / "ensemble_report.json").read_text())["num_paths"] == 1
    assert blobs[0] == blobs[1]


def test_simulate_reruns_are_byte_identical(tmp_path, monkeypatch):
    model = desk_model(tmp_path)
    payloads = []
    for run, threads in (("a", "1"), ("b", "4"), ("c", "2")):
        monkeypatch.setenv("SWITCHSTAB_THREADS", threads)
        out = tmp_path / run
        assert main(["simulate", model, "--paths", "2", "--T", "1.0",
                     "--seed", "77", "--out", str(out), "--quiet"]) == 0
        payloads.append((
            (out / "ensemble_report.json").read_bytes(),
            (out / "trajectories" / "path_00000.csv").read_bytes(),
            (out / "trajectories" / "path_00001.csv").read_bytes(),
        ))
    assert payloads[0] == payloads[1] == payloads[2]


def test_diagnose_desk(tmp_path, capsys):
    out = tmp_path / "diag"
    code = main(["diagnose", desk_model(tmp_path), "--out", str(out),
                 "--paths", "200", "--quiet"])
    assert code == 0
    report = json.loads((out / "diagnose_report.json").read_text())
    assert report["mixing"]["available"] is True
    assert report["mixing"]["lam"] == pytest.approx(2.0, abs=1e-12)
    assert report["generator_check"]["within_tolerance"] is True
    assert report["calibration"]["within_3se"] is True


def test_diagnose_reducible_chain_warns_but_succeeds(tmp_path, capsys):
    payload = copy.deepcopy(DESK_MODEL_JSON)
    payload["generator"] = [[0.0, 0.0], [0.0, 0.0]]
    out = tmp_path / "diag"
    code = main(["diagnose", write_model(tmp_path, payload), "--out", str(out),
                 "--paths", "50", "--quiet"])
    assert code == 0
    assert "mixing unavailable" in capsys.readouterr().err
    report = json.loads((out / "diagnose_report.json").read_text())
    assert report["mixing"]["available"] is False
