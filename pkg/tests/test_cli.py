import json
import subprocess
import sys

import numpy as np
import pytest
import yaml
from jsonschema import Draft7Validator

from extmax.cli import OUTPUT_ENV, SCENARIOS, SCHEMA, fill_defaults, main, validate_config
from extmax.evo_solver import read_field_dump
from extmax.exceptions import ConfigError


def _run(tmp_path, cfg, name="cfg.yaml", extra=()):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    out = tmp_path / "out"
    code = main(["run", str(path), "--output-dir", str(out), *extra])
    report = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
    return code, out, report


@pytest.fixture(autouse=True)
def _no_env_override(monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)


def test_list_names_the_six_scenarios(capsys):
    assert main(["list"]) == 0
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert names == list(SCENARIOS) and len(names) == 6


def test_schema_output_round_trips(capsys):
    assert main(["schema"]) == 0
    text = capsys.readouterr().out
    assert "EVOF1" in text
    schema = json.loads(text)
    assert schema == json.loads(json.dumps(SCHEMA))
    for scenario in SCENARIOS:
        filled = fill_defaults(schema, {"scenario": scenario})
        assert not list(Draft7Validator(schema).iter_errors(filled))


def test_help_documents_csv_columns(capsys):
    with pytest.raises(SystemExit):
        main(["run", "--help"])
    out = capsys.readouterr().out
    for col in ("weighted_norm", "norm_slot", "charge_residual", "EVOF1"):
        assert col in out


@pytest.mark.parametrize(
    "cfg,key",
    [
        ({"scenario": "nope"}, "scenario"),
        ({}, "scenario"),
        ({"scenario": "solve", "grid": {"n": 1}}, "grid.n"),
        ({"scenario": "solve", "time": {"tau": -1}}, "time.tau"),
        ({"scenario": "solve", "colour": "red"}, "colour"),
        ({"scenario": "solve", "material": {"spread": 1.5}}, "material.spread"),
    ],
)
def test_schema_violations_name_the_key(cfg, key):
    with pytest.raises(ConfigError) as exc:
        validate_config(cfg)
    assert exc.value.key == key and key in str(exc.value)


def test_schema_violation_exits_2(tmp_path, capsys):
    code, out, report = _run(tmp_path, {"scenario": "solve", "time": {"steps": 0}})
    assert code == 2 and report is None
    err = json.loads(capsys.readouterr().err)
    assert err == {"error": "config", "key": "time.steps", "message": err["message"]}


def test_semantic_config_errors_exit_2(tmp_path, capsys):
    code, *_ = _run(tmp_path, {"scenario": "solve", "grid": {"n": 2}})
    assert code == 2
    assert json.loads(capsys.readouterr().err)["key"] == "grid.n"
    code, *_ = _run(tmp_path, {"scenario": "dirac_equivalence"})
    assert code == 2
    assert json.loads(capsys.readouterr().err)["key"] == "grid.backend"


def test_unreadable_config_exits_2(tmp_path):
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("scenario: [unclosed")
    assert main(["run", str(bad)]) == 2


def test_bad_source_file_and_runtime_failure(tmp_path, capsys):
    cfg = {"scenario": "solve", "source": {"profile": "file", "path": str(tmp_path / "x.npy")}}
    np.save(tmp_path / "x.npy", np.ones((3, 3)))
    code, *_ = _run(tmp_path, cfg)
    # a wrong-shape source file is a config problem naming source.path
    assert code == 2 and json.loads(capsys.readouterr().err)["key"] == "source.path"
    cfg = {"scenario": "maxwell_dirac", "grid": {"backend": "periodic", "n": 2},
           "maxwell_dirac": {"picard_max": 1, "picard_tol": 1e-300}, "time": {"tau": 0.1}}
    code, *_ = _run(tmp_path, cfg)
    err = json.loads(capsys.readouterr().err)
    assert code == 1 and err["error"] == "PicardDivergence"


def test_zero_source_gives_zero_diagnostics(tmp_path):
    cfg = {"scenario": "solve", "source": {"profile": "zero"}, "time": {"steps": 5}}
    code, out, report = _run(tmp_path, cfg)
    assert code == 0 and report["passed"]
    rows = np.genfromtxt(out / "diagnostics.csv", delimiter=",", names=True)
    for col in rows.dtype.names[1:]:
        assert not np.any(rows[col])
    np.testing.assert_allclose(rows["t"], 0.05 * np.arange(5))


@pytest.mark.parametrize("system", ["maxwell", "extended", "gem"])
@pytest.mark.parametrize("integrator", ["implicit_euler", "crank_nicolson", "exponential"])
def test_solve_scenarios(tmp_path, system, integrator):
    cfg = {"scenario": "solve", "system": system, "integrator": integrator,
           "material": {"kind": "random"}, "source": {"profile": "random", "start_step": 3},
           "time": {"steps": 8}, "output": {"dump_fields": True}}
    code, out, report = _run(tmp_path, cfg)
    assert code == 0, report["summary"]
    names = [r["name"] for r in report["identities"]]
    assert "solve.causality" in names
    header, data = read_field_dump(out / "fields.evof")
    assert header["nsteps"] == 8 and not np.any(data[:3])


def test_eddy_current_solve(tmp_path):
    cfg = {"scenario": "solve", "system": "maxwell",
           "material": {"kind": "eddy_current", "profile": "two_region", "sigma": 1.0, "sigma2": 3.0, "mu": 1.0, "mu2": 2.0},
           "time": {"steps": 10}}
    code, _, report = _run(tmp_path, cfg)
    assert code == 0
    bound = next(r for r in report["identities"] if r["name"] == "solve.solution_bound")
    assert bound["detail"]["c0"] == 1.0


@pytest.mark.parametrize(
    "cfg",
    [
        {"scenario": "transfer_check", "material": {"kind": "random"}, "time": {"steps": 10}},
        {"scenario": "transfer_check", "system": "gem", "grid": {"backend": "periodic"}, "time": {"steps": 10}},
        {"scenario": "dirac_equivalence", "grid": {"backend": "periodic"}},
        {"scenario": "potential_reconstruction", "time": {"steps": 10}},
        {"scenario": "maxwell_dirac", "grid": {"backend": "periodic", "n": 2}, "time": {"tau": 0.1}},
        {"scenario": "identity_suite", "suite": {"sizes": [2, 3]}},
    ],
    ids=lambda c: c["scenario"] + ("-" + c["system"] if "system" in c else ""),
)
def test_theorem_scenarios_pass_and_cite_anchors(tmp_path, cfg):
    code, _, report = _run(tmp_path, cfg)
    assert code == 0, report["summary"]["failed"]
    assert report["summary"]["failed"] == []
    names = [r["name"] for r in report["identities"]]
    assert len(names) == len(set(names))
    assert all(r["anchor"] for r in report["identities"])


def test_nonblock_weight_fails_block_reduction(tmp_path):
    cfg = {"scenario": "transfer_check", "grid": {"backend": "periodic"}, "material": {"kind": "nonblock"},
           "time": {"steps": 10}}
    code, _, report = _run(tmp_path, cfg)
    assert code == 1
    assert "transfer.block_reduction_scalar" in report["summary"]["failed"]


def test_environment_overrides_output_dir(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv(OUTPUT_ENV, str(target))
    code, out, _ = _run(tmp_path, {"scenario": "dirac_equivalence", "grid": {"backend": "periodic", "n": 2}})
    assert code == 0 and (target / "report.json").exists() and not out.exists()


def test_same_seed_same_report(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["suite", "--sizes", "2,3", "--seed", "3", "--output-dir", str(a)]) == 0
    assert main(["suite", "--sizes", "2,3", "--seed", "3", "--output-dir", str(b)]) == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    stamps = json.loads((a / "timestamps.json").read_text())
    assert {"started", "finished", "elapsed_seconds", "check_seconds"} <= set(stamps)
    report = json.loads((a / "report.json").read_text())
    assert "started" not in json.dumps(report) and report["environment"]["extmax"]


def test_bad_suite_arguments(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["suite", "--sizes", "1,x"])
    assert exc.value.code == 2
    assert main(["suite", "--seed", "-1"]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "extmax.cli", "list"], capture_output=True, text=True)
    assert proc.returncode == 0 and "identity_suite" in proc.stdout
