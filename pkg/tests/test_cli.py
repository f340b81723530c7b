import json

import pytest

from obdeg.cli import main, run, validate_config
from obdeg.errors import ConfigurationError


def write_cfg(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_unknown_key_rejected():
    with pytest.raises(ConfigurationError) as excinfo:
        validate_config("degree", {"domain": {}, "mystery_knob": 1})
    assert "mystery_knob" in str(excinfo.value)
    with pytest.raises(ConfigurationError) as excinfo:
        validate_config("solve", {"newton": {"tol": 1e-8, "warp": 9}})
    assert "warp" in str(excinfo.value)


def test_degree_subcommand(tmp_path):
    cfg = {
        "name": "robin",
        "domain": {"shape": "disk", "radius": 1.0, "n_r": 12, "n_theta": 24},
        "problem": {"name": "laplace-robin"},
    }
    status, report = run("degree", cfg, str(tmp_path), seed=7)
    assert status == 0
    doc = json.loads((tmp_path / "robin.report.json").read_text())
    assert doc["measured"]["degree"] == 1
    assert doc["measured"]["dim_E_minus"] == 0
    assert doc["inputs"]["seed"] == 7
    assert (tmp_path / "robin.field.csv").exists()


def test_degree_subcommand_nonlinear_zero(tmp_path):
    # nonzero initial residual triggers the Newton solve before counting
    cfg = {
        "name": "semideg",
        "domain": {"shape": "disk", "radius": 1.0, "n_r": 10, "n_theta": 16},
        "problem": {"name": "semilinear-robin", "lam": 3.0},
        "initial": {"profile": "bump"},
        "newton": {"tol": 1e-10},
    }
    status, report = run("degree", cfg, str(tmp_path), seed=0)
    assert status == 0
    doc = json.loads((tmp_path / "semideg.report.json").read_text())
    assert doc["measured"]["degree"] == 1  # stable nontrivial state
    assert doc["measured"]["residual_sup"] < 1e-9


def test_solve_subcommand_and_determinism(tmp_path):
    cfg = {
        "name": "semi",
        "domain": {"shape": "disk", "radius": 1.0, "n_r": 10, "n_theta": 16},
        "problem": {"name": "semilinear-robin", "lam": 3.0},
        "initial": {"profile": "bump"},
        "newton": {"tol": 1e-10},
    }
    run("solve", cfg, str(tmp_path / "a"), seed=3)
    run("solve", cfg, str(tmp_path / "b"), seed=3)
    csv_a = (tmp_path / "a" / "semi.field.csv").read_text()
    csv_b = (tmp_path / "b" / "semi.field.csv").read_text()
    assert csv_a == csv_b


def test_homotopy_subcommand(tmp_path):
    cfg = {
        "name": "homo",
        "domain": {"shape": "disk", "radius": 1.0, "n_r": 10, "n_theta": 16},
        "family": {"name": "semilinear-robin", "parameter": "lam", "from": 0.0, "to": 3.0,
                   "forcing": 0.3},
        "initial": {"constant": 0.3},
        "newton": {"tol": 1e-9},
    }
    status, report = run("homotopy", cfg, str(tmp_path), seed=0)
    assert status == 0
    lines = (tmp_path / "homo.path.csv").read_text().strip().splitlines()
    assert lines[0] == "t,residual,lambda,chi,iterations"
    assert float(lines[-1].split(",")[0]) == 1.0


def test_yamabe_subcommand(tmp_path):
    cfg = {"name": "yam", "n": 3, "c": 0.0, "n_r": 24, "n_theta": 8}
    status, report = run("yamabe", cfg, str(tmp_path), seed=0)
    assert status == 0
    doc = json.loads((tmp_path / "yam.report.json").read_text())
    assert abs(doc["measured"]["degree"]) == 1
    assert "kappa" in doc["measured"]


def test_reflector_subcommand(tmp_path):
    cfg = {
        "name": "refl",
        "domain": {"shape": "disk", "radius": 0.85, "n_r": 10, "n_theta": 20},
        "eps_schedule": [1e-1, 3e-2, 1e-2],
        "foliation": {"r_init": 0.35},
    }
    status, report = run("reflector", cfg, str(tmp_path), seed=0)
    assert status == 0
    doc = json.loads((tmp_path / "refl.report.json").read_text())
    assert doc["measured"]["recovery_error"] < 1e-2
    img = (tmp_path / "refl.image.csv").read_text().strip().splitlines()
    assert img[0] == "sample_index,x,y"
    assert len(img) > 100


def test_verify_subcommand(tmp_path):
    status, report = run("verify", {"name": "v", "preset": "small"}, str(tmp_path), seed=0)
    assert status == 0
    assert all(report.passes.values())
    for check in report.measured["checks"]:
        doc = json.loads((tmp_path / f"{check}.report.json").read_text())
        for flag, ok in doc["passes"].items():
            assert ok, f"{check}:{flag}"
            assert "measured" in doc


def test_main_error_paths(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["degree", "--config", str(bad), "--out", str(tmp_path)]) == 2

    cfg = write_cfg(tmp_path, "unknown.json", {"mystery": 1})
    assert main(["degree", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_main_runtime_error_writes_partial_report(tmp_path):
    # negative-curvature target is rejected by the solver at run time
    cfg = write_cfg(tmp_path, "neg.json", {"name": "neg", "n": 3, "c": -1.0})
    assert main(["yamabe", "--config", cfg, "--out", str(tmp_path)]) == 1
    doc = json.loads((tmp_path / "neg.report.json").read_text())
    assert doc["passes"]["completed"] is False
    assert "UnsupportedRegimeError" in doc["measured"]["error_type"]
