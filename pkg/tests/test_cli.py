import csv
import json

import numpy as np
import pytest

from nbodyhj.cli import parse_t_grid, run
from nbodyhj.errors import ParseError


def test_verify_parabolic(tmp_path, capsys):
    out = tmp_path / "v.json"
    assert run(["verify", "--scenario", "parabolic_homothetic", "--quiet", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["checks"] and all(c["passed"] for c in doc["checks"])
    assert "PASS" in capsys.readouterr().out


def test_solve_bad_x0_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"schema_version": 1, "masses": [1.0, 1.0], "kind": "hyperbolic",
                             "a": [[1.0, 0.0], [-1.0, 0.0]], "x0": [[0.0, 1.0, 2.0]]}))
    assert run(["solve", "--scenario", str(p), "--out", str(tmp_path / "o"), "--quiet"]) == 2
    assert "x0" in capsys.readouterr().err


def test_solve_writes_bundle(tmp_path):
    out = tmp_path / "o"
    assert run(["solve", "--scenario", "hyperbolic_two_body", "--out", str(out), "--quiet",
                "--T0", "100", "--per-doubling", "8", "--restarts", "1", "--no-richardson"]) == 0
    doc = json.loads((out / "result.json").read_text())
    assert doc["sidecars"] == ["minimizer.csv", "trajectory.csv"]
    assert doc["solver_options"]["T0"] == 100.0
    rows = list(csv.reader((out / "trajectory.csv").open()))
    assert rows[0][0] == "t" and len(rows) > 10


def test_scan_singular_slice(tmp_path, capsys):
    out = tmp_path / "scan.csv"
    assert run(["scan", "--scenario", "singular_slice", "--slice", "singular_slice", "--out", str(out),
                "--quiet", "--no-finite-horizon"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["points"] == 15 and summary["errors"] == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 15
    ks = {(r["i"], r["j"]): int(r["k"]) for r in rows}
    assert ks[("1", "2")] == 2
    assert summary["singular"] == sum(k > 1 for k in ks.values())


def test_central_config_json(tmp_path):
    out = tmp_path / "cc.json"
    assert run(["central-config", "--masses", "1", "1", "1", "--quiet", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    (cl,) = doc["clusters"]
    assert cl["bodies"] == [0, 1, 2]
    assert cl["kkt_residual"] <= 1e-10
    # equal masses: equilateral triangle, U = 3 / side
    b = np.array(cl["b_m"])
    sides = [np.linalg.norm(b[i] - b[j]) for i, j in ((0, 1), (0, 2), (1, 2))]
    assert max(sides) - min(sides) <= 1e-8


def test_value_stdout(capsys):
    assert run(["value", "--scenario", "parabolic_homothetic", "--quiet", "--no-finite-horizon"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert abs(doc["value"]["v"]) <= 1e-8 and doc["value"]["k"] == 1


def test_spectrum_outputs(tmp_path):
    out = tmp_path / "sp"
    assert run(["spectrum", "--scenario", "hyperbolic_two_body", "--t-grid", "1:4:4", "--quiet",
                "--out", str(out)]) == 0
    doc = json.loads((out / "spectrum.json").read_text())
    assert doc["sidecars"] == ["lambda_profile.csv"]
    lam = np.loadtxt(out / "lambda_profile.csv", delimiter=",", skiprows=1, usecols=1)
    assert lam.size == 4 and np.all(np.diff(lam) > 0)


@pytest.mark.parametrize("raw", ["1:2", "a:2:3", "2:1:3", "1:2:0", "0:1:3", "1:2:1.5"])
def test_t_grid_errors(raw):
    with pytest.raises(ParseError):
        parse_t_grid(raw)


def test_t_grid_ok():
    np.testing.assert_array_equal(parse_t_grid("1:2:3"), [1.0, 1.5, 2.0])


def test_usage_errors(tmp_path):
    assert run(["nonsense"]) == 2
    assert run(["value", "--scenario", str(tmp_path / "missing.json"), "--quiet"]) == 2
    assert run(["spectrum", "--scenario", "hyperbolic_two_body", "--t-grid", "x", "--quiet"]) == 2
