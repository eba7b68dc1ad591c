"""Tests for run configuration parsing and validation."""

import json
from pathlib import Path

import pytest

from anisopt.exceptions import ConfigurationError
from anisopt.run_config import apply_overrides, example_config_lines, parse_config

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def minimal_config(tmp_path) -> Path:
    path = tmp_path / "run.toml"
    path.write_text("\n".join(example_config_lines()) + "\n", encoding="utf-8")
    return path


def test_minimal_config_parses(minimal_config):
    config = parse_config(minimal_config)
    assert config.subcommand == "solve-state"
    assert config.mesh.dim == 1 and config.mesh.n == 32
    assert config.problem.p == 4.0
    assert config.regularization.delta == 0.5
    assert config.control.name == "identity"
    assert config.seed == 20240601
    assert config.samples == 10_000


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_are_valid(path):
    config = parse_config(path)
    assert config.subcommand in ("solve-state", "optimize", "sweep", "check-inequalities")


def test_p_below_two_is_rejected(minimal_config):
    with pytest.raises(ConfigurationError, match="2 ≤ p < ∞"):
        parse_config(minimal_config, ["problem.p=1.5"])


def test_missing_key_is_named(minimal_config):
    text = minimal_config.read_text(encoding="utf-8").replace("xi2 = 2.0\n", "")
    minimal_config.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigurationError, match="missing required key 'bounds.xi2'"):
        parse_config(minimal_config)


def test_unknown_key_is_rejected(minimal_config):
    with pytest.raises(ConfigurationError, match=r"unknown key\(s\) in \[mesh\]: h"):
        parse_config(minimal_config, ["mesh.h=0.1"])
    with pytest.raises(ConfigurationError, match="unknown top-level"):
        parse_config(minimal_config, ["verbose=true"])


def test_duplicate_key_is_a_parse_error(tmp_path):
    path = tmp_path / "dup.toml"
    path.write_text('subcommand = "solve-state"\n[mesh]\ndim = 1\ndim = 2\n', encoding="utf-8")
    with pytest.raises(ConfigurationError, match="failed to parse"):
        parse_config(path)


def test_missing_file_and_section(tmp_path, minimal_config):
    with pytest.raises(ConfigurationError, match="config file not found"):
        parse_config(tmp_path / "absent.toml")
    with pytest.raises(ConfigurationError, match=r"missing required section \[kernel\]"):
        parse_config(minimal_config, subcommand="solve-hammerstein")


def test_overrides_are_typed(minimal_config):
    config = parse_config(
        minimal_config, ["problem.p=3", "control.name=rotated-anisotropic", "seed=7"]
    )
    assert config.problem.p == 3.0
    assert config.control.name == "rotated-anisotropic"
    assert config.seed == 7
    with pytest.raises(ConfigurationError, match="section.key=value"):
        apply_overrides({}, ["problem.p"])


@pytest.mark.parametrize(
    "override",
    ["mesh.dim=3", "mesh.n=1", "seed=-1", "regularization.k=0.5", "control.name=swirl"],
)
def test_out_of_range_values(minimal_config, override):
    with pytest.raises(ConfigurationError):
        parse_config(minimal_config, [override])


def test_schedule_from_explicit_lists(minimal_config):
    config = parse_config(
        minimal_config,
        ["schedule.epsilons=[0.1, 0.01]", "schedule.ks=[2.0, 4.0]"],
        subcommand="sweep",
    )
    assert config.schedule.steps == ((0.1, 2.0), (0.01, 4.0))
    with pytest.raises(ConfigurationError, match="equal length"):
        parse_config(minimal_config, ["schedule.epsilons=[0.1]"], subcommand="sweep")


def test_optimize_requirements():
    path = CONFIG_DIR / "optimize_self_target.toml"
    with pytest.raises(ConfigurationError, match="p = 2"):
        parse_config(path, ["problem.p=3"])
    with pytest.raises(ConfigurationError, match="theta0"):
        parse_config(path, ["optimize.theta0=[1.0]"])
    with pytest.raises(ConfigurationError, match=r"\[regularization\]"):
        parse_config(path, ["optimize.regularized=true"])


def test_canonical_json_is_stable(minimal_config):
    first = parse_config(minimal_config)
    second = parse_config(minimal_config)
    assert first.canonical_json() == second.canonical_json()
    assert " " not in first.canonical_json()
    assert json.loads(first.canonical_json())["mesh"] == {"dim": 1, "n": 32}
    assert parse_config(minimal_config, ["seed=1"]).canonical_json() != first.canonical_json()
