"""End-to-end tests of the command-line interface."""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from main import EXIT_ERROR, EXIT_OK, main

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
FAST_BATTERY = ["--set", "inequalities.samples=500"]


def _invoke(*args: str):
    return CliRunner().invoke(main, list(args), catch_exceptions=False)


def test_check_inequalities_writes_outputs(tmp_path):
    result = _invoke(
        "check-inequalities",
        "--config", str(CONFIG_DIR / "check_inequalities.toml"),
        *FAST_BATTERY,
        "--output-dir", str(tmp_path),
    )
    assert result.exit_code == EXIT_OK, result.output
    lines = (tmp_path / "inequalities.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 6
    manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["passed"] is True
    assert manifest["seed"] == 20240601
    assert manifest["outputs"] == ["inequalities.csv", "manifest.json"]
    assert len(manifest["config_hash"]) == 64


def test_same_config_gives_identical_csv(tmp_path):
    for name in ("first", "second"):
        result = _invoke("check-inequalities", *FAST_BATTERY, "--output-dir", str(tmp_path / name))
        assert result.exit_code == EXIT_OK, result.output
    first = (tmp_path / "first" / "inequalities.csv").read_bytes()
    assert first == (tmp_path / "second" / "inequalities.csv").read_bytes()


def test_bad_config_exits_with_error_record(tmp_path):
    result = _invoke(
        "solve-state",
        "--config", str(CONFIG_DIR / "solve_state.toml"),
        "--set", "problem.p=1.5",
        "--output-dir", str(tmp_path),
    )
    assert result.exit_code == EXIT_ERROR
    assert '"error": "ConfigurationError"' in result.output
    assert not (tmp_path / "manifest.json").exists()


def test_missing_config_file_is_an_error(tmp_path):
    result = _invoke("sweep", "--config", str(tmp_path / "absent.toml"))
    assert result.exit_code == EXIT_ERROR
    assert "config file not found" in result.output


@pytest.mark.integration
def test_solve_state_and_reload_control(tmp_path):
    args = ["--config", str(CONFIG_DIR / "solve_state.toml"), "--set", "mesh.n=8"]
    result = _invoke("solve-state", *args, "--output-dir", str(tmp_path / "named"))
    assert result.exit_code == EXIT_OK, result.output
    assert len((tmp_path / "named" / "state.csv").read_text(encoding="utf-8").splitlines()) == 10

    control_file = tmp_path / "named" / "control.csv"
    result = _invoke(
        "solve-state", *args,
        "--set", f"control.file={control_file}",
        "--output-dir", str(tmp_path / "reloaded"),
    )
    assert result.exit_code == EXIT_OK, result.output
    named = (tmp_path / "named" / "state.csv").read_bytes()
    assert named == (tmp_path / "reloaded" / "state.csv").read_bytes()


def test_control_file_must_match_mesh(tmp_path):
    control_file = tmp_path / "control.csv"
    control_file.write_text("cell_id,a11\n0,1.0\n1,1.0\n", encoding="utf-8")
    result = _invoke(
        "solve-state",
        "--config", str(CONFIG_DIR / "solve_state.toml"),
        "--set", f"control.file={control_file}",
        "--output-dir", str(tmp_path / "out"),
    )
    assert result.exit_code == EXIT_ERROR
    assert "cells" in result.output


def test_runs_lists_manifests(tmp_path):
    _invoke("check-inequalities", *FAST_BATTERY, "--output-dir", str(tmp_path / "run1"))
    result = _invoke("runs", "--output-dir", str(tmp_path))
    assert result.exit_code == EXIT_OK
    assert "No manifests found" not in result.output

    empty = _invoke("runs", "--output-dir", str(tmp_path / "nothing"))
    assert "No manifests found" in empty.output


@pytest.mark.slow
@pytest.mark.integration
def test_optimize_with_value_convergence(tmp_path):
    result = _invoke(
        "optimize",
        "--config", str(CONFIG_DIR / "optimize_self_target.toml"),
        "--set", "optimize.value_convergence=true",
        "--output-dir", str(tmp_path),
    )
    assert result.exit_code == EXIT_OK, result.output
    manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["checks"]["value_gap_trend"] is True
    assert manifest["checks"]["value_final_gap"] is True
    assert "values.csv" in manifest["outputs"]


def test_solve_state_reports_control_margins(tmp_path):
    result = _invoke(
        "solve-state",
        "--config", str(CONFIG_DIR / "solve_state.toml"),
        "--set", "mesh.n=8",
        "--set", 'control.name="rotated-anisotropic"',
        "--set", "mesh.dim=2",
        "--output-dir", str(tmp_path),
    )
    assert result.exit_code == EXIT_OK, result.output
    manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["checks"]["control_spectral_bounds"] is True
    assert manifest["checks"]["control_norm_equivalence"] is True
    state = manifest["reports"]["state"]
    assert state["spectral_margin"] >= -1e-10
    assert state["norm_equivalence_margin"] >= -1e-10
