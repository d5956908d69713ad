import json
import os
import subprocess
import sys

import pytest

from malab.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, dispatch, exit_code_for, load_configs
from malab.scenarios import ConfigError, StageError
from malab.solver import SolverError
from malab.transforms import KCertificationError

MANUFACTURED = {"family": "Manufactured", "background": {"resolution": [32]},
                "deltas": [0.1, 0.05], "k_list": [1e2], "diameter_sources": 2}


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def _last_json(err: str) -> dict:
    return json.loads(err.strip().splitlines()[-1])


def test_exit_code_mapping():
    assert exit_code_for(ConfigError("x")) == EXIT_VALIDATION
    assert exit_code_for(OSError("x")) == EXIT_VALIDATION
    assert exit_code_for(SolverError("x")) == EXIT_NUMERICAL
    assert exit_code_for(KCertificationError("x")) == EXIT_NUMERICAL
    assert exit_code_for(StageError("solve", SolverError("x"))) == EXIT_NUMERICAL
    assert exit_code_for(StageError("setup", ConfigError("x"))) == EXIT_VALIDATION


def test_solve_writes_report(tmp_path):
    out = tmp_path / "out"
    assert dispatch(["solve", "--config", _write(tmp_path, MANUFACTURED), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["solve"]["residual_sup"] < 1e-8
    assert "transform" not in rep


def test_incompatible_density_exits_1_with_json(tmp_path, capsys):
    cfg = _write(tmp_path, dict(MANUFACTURED, density_scale=1.1))
    assert dispatch(["solve", "--config", cfg, "--json-errors"]) == EXIT_VALIDATION
    err = _last_json(capsys.readouterr().err)
    assert err["exit_code"] == 1 and err["stage"] == "setup"
    assert "compatib" in err["message"]


def test_bad_config_and_usage(tmp_path, capsys):
    assert dispatch(["solve", "--config", _write(tmp_path, {"family": "Nope"})]) == EXIT_VALIDATION
    assert dispatch(["solve", "--config", str(tmp_path / "missing.json")]) == EXIT_VALIDATION
    assert dispatch(["solve"]) == EXIT_VALIDATION
    assert dispatch(["bogus"]) == EXIT_VALIDATION
    assert dispatch([]) == EXIT_VALIDATION
    assert dispatch(["solve", "--config", _write(tmp_path, MANUFACTURED), "--threads", "0",
                     "--json-errors"]) == EXIT_VALIDATION
    assert _last_json(capsys.readouterr().err)["error"] == "UsageError"


def test_numerical_failure_exits_2(tmp_path, capsys, monkeypatch):
    import malab.scenarios as sc

    def boom(problem):
        raise SolverError("did not converge")

    monkeypatch.setattr(sc, "solve_n1", boom)
    code = dispatch(["solve", "--config", _write(tmp_path, MANUFACTURED), "--json-errors"])
    assert code == EXIT_NUMERICAL
    err = _last_json(capsys.readouterr().err)
    assert err == {"error": "SolverError", "message": "did not converge", "stage": "solve",
                   "exit_code": 2}


def test_experiment_list_with_threads(tmp_path):
    doc = {"experiments": [dict(MANUFACTURED, name="a"), dict(MANUFACTURED, name="b", amplitude=0.02)]}
    out = tmp_path / "out"
    code = dispatch(["transform", "--config", _write(tmp_path, doc), "--out", str(out),
                     "--threads", "2"])
    assert code == EXIT_OK
    for name in ("a", "b"):
        rep = json.loads((out / name / "report.json").read_text())
        assert rep["config"]["name"] == name and "transform" in rep


def test_load_configs_names(tmp_path):
    cfgs = load_configs(_write(tmp_path, [MANUFACTURED, MANUFACTURED]))
    assert [c.name for c in cfgs] == ["manufactured_0", "manufactured_1"]
    with pytest.raises(ConfigError):
        load_configs(_write(tmp_path, [dict(MANUFACTURED, name="x")] * 2))
    with pytest.raises(ConfigError):
        load_configs(_write(tmp_path, []))
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        load_configs(str(bad))


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, dict(MANUFACTURED, family="Example1", background={"resolution": [256]},
                                cutoffs=[1e-2]))
    out = tmp_path / "ex1"
    proc = subprocess.run([sys.executable, "-m", "malab.cli", "experiment", "--config", cfg,
                           "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    rep = json.loads((out / "report.json").read_text())
    assert "alpha_fit" in rep["modulus"]
    assert os.path.exists(out / "tables" / "sharpness.csv")
