"""Tests for artifact persistence."""

import json

import numpy as np
import pytest

from anisopt.control_set import control_header, control_rows, named_control
from anisopt.exceptions import ConfigurationError
from anisopt.mesh import build_mesh
from anisopt.result_store import ResultStore, format_cell, load_control_csv


def test_format_cell():
    assert format_cell(0.1) == "0.10000000000000001"
    assert format_cell(np.float64(2.0)) == "2"
    assert format_cell(True) == "1"
    assert format_cell(np.int64(3)) == "3"
    assert format_cell("gaussian") == "gaussian"


def test_csv_needs_header(tmp_path):
    store = ResultStore(tmp_path)
    with pytest.raises(ConfigurationError):
        store.write_csv("empty.csv", [], [])


def test_csv_and_json_are_written_atomically(tmp_path):
    store = ResultStore(tmp_path / "run")
    store.write_csv("table.csv", ["id", "value"], [[0, 1.0 / 3.0], [1, 2.5]])
    store.write_json("data.json", {"b": 1, "a": np.array([1.0, 2.0])})

    text = (tmp_path / "run" / "table.csv").read_text(encoding="utf-8")
    assert text == "id,value\n0,0.33333333333333331\n1,2.5\n"
    assert store.read_csv("table.csv")[1] == {"id": "1", "value": "2.5"}

    payload = (tmp_path / "run" / "data.json").read_text(encoding="utf-8")
    assert payload.index('"a"') < payload.index('"b"')
    assert json.loads(payload)["a"] == [1.0, 2.0]
    # no temporary files survive the rename
    assert sorted(p.name for p in (tmp_path / "run").iterdir()) == ["data.json", "table.csv"]


def test_manifest_lists_outputs(tmp_path):
    store = ResultStore(tmp_path)
    store.write_csv("b.csv", ["x"], [[1]])
    store.write_csv("a.csv", ["x"], [[1]])
    store.write_manifest({"subcommand": "sweep", "finished_at": "2024-01-01T00:00:00"})
    manifest = store.load_manifest()
    assert manifest["outputs"] == ["a.csv", "b.csv", "manifest.json"]
    assert manifest["subcommand"] == "sweep"


def test_list_manifests_newest_first(tmp_path):
    ResultStore(tmp_path / "old").write_manifest({"finished_at": "2024-01-01"})
    ResultStore(tmp_path / "new").write_manifest({"finished_at": "2024-06-01"})
    (tmp_path / "broken").mkdir()
    (tmp_path / "broken" / "manifest.json").write_text("{", encoding="utf-8")

    manifests = ResultStore(tmp_path).list_manifests()
    assert [m["finished_at"] for m in manifests] == ["2024-06-01", "2024-01-01"]
    assert manifests[0]["directory"].endswith("new")
    assert ResultStore(tmp_path / "absent").list_manifests() == []


@pytest.mark.parametrize("dim,name", [(1, "identity"), (2, "rotated-anisotropic")])
def test_control_csv_reloads(tmp_path, bounds, dim, name):
    mesh = build_mesh(dim, 4)
    control = named_control(name, mesh, bounds)
    store = ResultStore(tmp_path)
    path = store.write_csv("control.csv", control_header(dim), control_rows(control))
    loaded = load_control_csv(path, dim)
    np.testing.assert_allclose(loaded.matrices, control.matrices, rtol=0.0, atol=1e-14)
    assert loaded.is_admissible(bounds)


def test_control_csv_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        load_control_csv(tmp_path / "absent.csv", 1)
    path = tmp_path / "bad.csv"
    path.write_text("cell_id,a11\n0,abc\n", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_control_csv(path, 1)
