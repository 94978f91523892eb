import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from robinid.cli import DEFAULTS, main, resolve_config, run
from robinid.errors import ConfigError

ANALYTIC = {"mesh": {"dim": 1, "n": 64}, "problem": {"a": 1.0, "b": 0.0, "f": 1.0, "gamma": 1.0}}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _read_field(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["value"]) for r in rows]), rows


def test_solve_analytic_midpoint(tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "--config", _write(tmp_path, ANALYTIC), "--out", str(out)]) == 0
    u, rows = _read_field(out / "u.csv")
    assert list(rows[0]) == ["index", "x", "value"]
    assert u[32] == pytest.approx(0.625, abs=1.0 / 64**2)
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["problem"]["gamma"] == 1.0
    assert report["config"]["solver"] == DEFAULTS["solver"]
    assert report["result"]["stability_margin"] > 0
    for key in ("c_p", "c_f", "c_t", "alpha", "beta"):
        assert key in report["constants"]
    assert report["timings"]["wall_seconds"] > 0


def test_constants_unit_interval(tmp_path):
    cfg = {"mesh": {"dim": 1, "n": 256}}
    report = run("constants", cfg, tmp_path)
    assert abs(report["constants"]["c_p"] - 1 / np.pi**2) <= 0.01 / np.pi**2


def test_missing_gamma_is_schema_error(tmp_path, capsys):
    cfg = {"mesh": {"dim": 1, "n": 8}, "problem": {"a": 1.0}}
    out = tmp_path / "out"
    out.mkdir()
    status = main(["solve", "--config", _write(tmp_path, cfg), "--out", str(out)])
    assert status == 2
    err = json.loads(capsys.readouterr().err)
    assert err["status"] == "error"
    assert err["code"] == "config_error"
    assert "gamma" in err["message"]
    assert json.loads((out / "error.json").read_text())["code"] == "config_error"


@pytest.mark.parametrize("cfg,status,code", [
    ({"mesh": {"dim": 1, "n": 8}, "problem": {"gamma": 1.0, "a": 3.0}}, 3, "admissibility_violation"),
    ({"mesh": {"dim": 1, "n": 0}, "problem": {"gamma": 1.0}}, 2, "config_error"),
    ({"mesh": {"dim": 1, "n": 8}, "problem": {"gamma": 1.0, "a": {"csv": "nope.csv"}}}, 2, "config_error"),
    ({"mesh": {"dim": 1, "n": 8}, "problem": {"gamma": 1.0}, "colour": 1}, 2, "config_error"),
])
def test_structured_errors(tmp_path, capsys, cfg, status, code):
    assert main(["solve", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == status
    err = json.loads(capsys.readouterr().err)
    assert err["code"] == code
    assert err["exit_status"] == status
    assert {"message", "field"} <= set(err)


def test_bad_command_line(capsys):
    assert main(["frobnicate"]) == 2
    assert main(["solve", "--config", "/does/not/exist.json"]) == 2
    assert main(["solve", "--threads", "x"]) == 2
    errs = [json.loads(line) for line in capsys.readouterr().err.splitlines()]
    assert all(e["status"] == "error" for e in errs)


def test_invalid_mesh_code(tmp_path, capsys):
    cfg = {"mesh": {"dim": 2, "nx": 3}, "problem": {"gamma": 1.0}}
    assert main(["solve", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["code"] == "invalid_mesh"


def test_resolve_fills_defaults():
    cfg = resolve_config("solve", ANALYTIC, seed=9)
    assert cfg["seed"] == 9
    assert cfg["optimizer"] == DEFAULTS["optimizer"]
    assert cfg["plan"]["noise_seed"] == 9
    with pytest.raises(ConfigError):
        resolve_config("invert", {"problem": {"gamma": 1.0}})


def test_csv_field_input(tmp_path):
    out1 = tmp_path / "o1"
    run("solve", ANALYTIC, out1)
    # feed the solution back as a source term from CSV
    cfg = {**ANALYTIC, "problem": {**ANALYTIC["problem"], "f": {"csv": str(out1 / "u.csv")}}}
    report = run("solve", cfg, tmp_path / "o2")
    assert report["result"]["residual"] <= 1e-10
    bad = {"mesh": {"dim": 1, "n": 32}, "problem": cfg["problem"]}
    with pytest.raises(ConfigError):
        run("solve", bad, tmp_path / "o3")


def test_gradcheck_passes(tmp_path):
    cfg = {"mesh": {"dim": 2, "nx": 8, "ny": 8},
           "problem": {"a": {"preset": "bump"}, "b": 0.1, "b_hi": 0.2, "f": 1.0, "gamma": 1.0}}
    report = run("gradcheck", cfg, tmp_path)
    assert report["result"]["passed"]
    assert report["result"]["max_relative_error"] <= 1e-6
    header = (tmp_path / "gradcheck.csv").read_text().splitlines()[0]
    assert header == "index,closed_form,finite_difference,relative_error"


def test_invert_synthetic(tmp_path):
    cfg = {"mesh": {"dim": 1, "n": 32},
           "problem": {"a": {"preset": "bump"}, "gamma": 1.0},
           "invert": {"observation": {"synthetic": {"delta": 1e-3}}, "rho": 1e-3, "a_star": {"offset": 0.1}}}
    report = run("invert", cfg, tmp_path, seed=3)
    res = report["result"]
    assert res["converged"]
    assert np.all(np.diff(res["objective_trajectory"]) <= 0)
    assert res["coefficient_error_l2"] < 0.1
    a_hat, _ = _read_field(tmp_path / "a_hat.csv")
    assert a_hat.size == 32 and a_hat.min() >= 0.5 and a_hat.max() <= 2.0
    # same seed, same observation
    run("invert", cfg, tmp_path / "again", seed=3)
    assert (tmp_path / "observation.csv").read_bytes() == (tmp_path / "again" / "observation.csv").read_bytes()


def test_invert_requires_rho(tmp_path, capsys):
    cfg = {"problem": {"gamma": 1.0}, "invert": {"observation": 0.5}}
    assert main(["invert", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "invert.rho"


RATES = {"plan": {"mesh": {"dim": 1, "n": 16}, "num_levels": 3, "delta_0": 0.05, "replicates": 2},
         "optimizer": {"grad_tol": 1e-6}}


def test_rates_byte_identical(tmp_path):
    path = _write(tmp_path, RATES)
    for name in ("r1", "r2"):
        assert main(["rates", "--config", path, "--out", str(tmp_path / name), "--seed", "11"]) == 0
    for f in ("rates.csv", "coefficient_error.dat", "state_misfit.dat"):
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()
    report = json.loads((tmp_path / "r1" / "report.json").read_text())
    assert report["config"]["plan"]["noise_seed"] == 11
    assert report["config"]["plan"]["optimizer"]["grad_tol"] == 1e-6
    assert set(report["result"]["verdicts"]) >= {"coefficient_slope_in_band", "state_slope_in_band"}
    with open(tmp_path / "r1" / "rates.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 6


def test_rates_threads_match_serial(tmp_path):
    path = _write(tmp_path, RATES)
    main(["rates", "--config", path, "--out", str(tmp_path / "a"), "--threads", "1"])
    main(["rates", "--config", path, "--out", str(tmp_path / "b"), "--threads", "2"])
    assert (tmp_path / "a" / "rates.csv").read_bytes() == (tmp_path / "b" / "rates.csv").read_bytes()


def test_rates_sweep_failure_code(tmp_path, capsys):
    cfg = {"plan": RATES["plan"], "optimizer": {"max_iters": 1}}
    assert main(["rates", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 7
    assert json.loads(capsys.readouterr().err)["code"] == "sweep_failure"


def test_console_script_runs(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "robinid.cli", "constants", "--out", str(tmp_path)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["status"] == "ok"
