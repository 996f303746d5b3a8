import csv
import json
import subprocess
import sys

import pytest

from pathhj.cli import main

GRID = {"h": 0.5, "T": 1.0, "dt": 0.1, "n": 1}


def _write(tmp_path, name, obj):
    f = tmp_path / name
    f.write_text(json.dumps(obj))
    return str(f)


@pytest.fixture
def integrator(tmp_path):
    return _write(tmp_path, "integrator.json", {"kind": "integrator", "grid": GRID})


def test_counterexample(tmp_path):
    out = tmp_path / "probe.csv"
    assert main(["counterexample", "--l", "2", "--out", str(out)]) == 0
    rows = list(csv.reader(out.read_text().splitlines()))
    assert rows[0][0] == "tau" and rows[-1][0] == "limit"
    assert float(rows[-1][2]) == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("t,x", [(0.0, 0.0), (0.3, 1.2), (0.5, -0.2)])
def test_value_closed_form(tmp_path, integrator, t, x):
    pt = _write(tmp_path, "pt.json", {"t": t, "constant": [x]})
    out = tmp_path / "v.json"
    assert main(["value", "--problem", integrator, "--point", pt, "--out", str(out), "--no-timestamp"]) == 0
    rep = json.loads(out.read_text())
    assert rep["estimate"] == pytest.approx(max(0.0, abs(x) - (1.0 - t)), abs=1e-9)
    for key in ("estimate", "tolerance", "one_sided", "budget", "seed"):
        assert key in rep
    assert "timestamp" not in rep


def test_bad_grid_points_at_dt(tmp_path, capsys):
    prob = _write(tmp_path, "bad.json", {"kind": "integrator", "grid": {"h": 0.5, "T": 1.0, "dt": 0.3}})
    pt = _write(tmp_path, "pt.json", {"t": 0.0, "constant": [0.0]})
    assert main(["value", "--problem", prob, "--point", pt]) == 2
    assert "/grid/dt" in capsys.readouterr().err


def test_schema_violation_pointer(tmp_path, capsys, integrator):
    pt = _write(tmp_path, "pt.json", {"t": -1.0, "constant": [0.0]})
    assert main(["value", "--problem", integrator, "--point", pt]) == 2
    assert "at /t" in capsys.readouterr().err


def test_subgrad_search_refusal_exits_one(tmp_path, capsys):
    pt = _write(tmp_path, "pt.json", {"grid": {"h": 0.125, "T": 0.5, "dt": 2.0 ** -10}, "t": 0.125,
                                      "constant": [0.3]})
    out = tmp_path / "sg.json"
    assert main(["subgrad-search", "--phi", "builtin:neg_t", "--point", pt, "--L", "polytope:0",
                 "--out", str(out)]) == 1
    assert "/d0" in capsys.readouterr().err
    assert json.loads(out.read_text())["refused"] is True


def test_subgrad_search_success(tmp_path):
    pt = _write(tmp_path, "pt.json", {"grid": {"h": 0.125, "T": 0.5, "dt": 2.0 ** -12}, "t": 0.125,
                                      "constant": [0.3]})
    out = tmp_path / "sg.json"
    assert main(["subgrad-search", "--phi", "builtin:t", "--point", pt, "--L", "polytope:0",
                 "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["success"] and rep["margin"] > 0 and rep["rho_inf"] <= 0.1


def test_gauge_check_and_bp_demo(tmp_path):
    assert main(["gauge-check", "--budget", "50", "--n", "2", "--out", str(tmp_path / "g.csv")]) == 0
    assert main(["bp-demo", "--budget", "60", "--out", str(tmp_path / "bp.json")]) == 0
    rep = json.loads((tmp_path / "bp.json").read_text())
    assert rep["checks"]["exact_min"] and rep["size"] <= 60


def test_check_solution_expect_pass(tmp_path, integrator):
    pts = _write(tmp_path, "pts.json", {"points": [{"t": 0.2, "constant": [0.4]}, {"t": 0.5, "constant": [1.0]}],
                                        "s": [[0.0], [1.0]]})
    out = tmp_path / "cs.json"
    assert main(["check-solution", "--problem", integrator, "--points", pts, "--budget-search", "8",
                 "--expect", "pass", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["verdicts"]["UM"] == "PASS"


def test_dpp_exit_codes(tmp_path, integrator):
    pt = _write(tmp_path, "pt.json", {"t": 0.6, "constant": [0.3]})
    assert main(["dpp", "--problem", integrator, "--point", pt, "--out", str(tmp_path / "d.json")]) == 0
    assert main(["dpp", "--problem", integrator, "--point", pt, "--tau", "0.65"]) == 2


@pytest.mark.parametrize("argv", [
    ["bp-demo", "--budget", "80", "--kappa", "0.5"],
    ["gauge-check", "--budget", "40"],
])
def test_outputs_identical_across_workers(tmp_path, argv):
    texts = []
    for w in (1, 4, 4):
        out = tmp_path / f"o{w}_{len(texts)}"
        assert main(argv + ["--workers", str(w), "--no-timestamp", "--out", str(out)]) == 0
        texts.append(out.read_bytes())
    assert texts[0] == texts[1] == texts[2]


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "pathhj", "counterexample", "--l", "4"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0
    assert float(r.stdout.strip().splitlines()[-1].split(",")[2]) == pytest.approx(1.5, abs=1e-3)
