import json
import os

import numpy as np
import pytest

from data_store import ResultStore, RunManifest, file_sha256, format_cell, write_manifest


@pytest.mark.parametrize("value, text", [
    (None, ""),
    (True, "true"),
    (np.int64(7), "7"),
    (0.1, "0.1"),
    (np.float64(1e-20), "1e-20"),
    (float("nan"), "nan"),
    ("Transmitted", "Transmitted"),
])
def test_format_cell(value, text):
    assert format_cell(value) == text


def test_tables_and_documents(tmp_path):
    store = ResultStore()
    store.create_table("sweep", ["J", "forward_class"])
    store.add_rows("sweep", [(1e11, "Stalled"), (2e11, "Transmitted")])
    store.add_document("mask.pgm", b"P5\n1 1\n255\n\xff")
    store.add_document("plot.svg", "<svg/>")
    with pytest.raises(ValueError):
        store.add_row("sweep", (1.0,))
    assert store.get_table("sweep").column("forward_class") == ["Stalled", "Transmitted"]

    paths = store.write_all(str(tmp_path))
    assert [os.path.basename(p) for p in paths] == ["sweep.csv", "mask.pgm", "plot.svg"]
    assert (tmp_path / "sweep.csv").read_text(encoding="utf-8") == \
        "J,forward_class\n100000000000.0,Stalled\n200000000000.0,Transmitted\n"
    assert (tmp_path / "plot.svg").read_bytes() == b"<svg/>"


def test_delete_table():
    store = ResultStore()
    store.create_table("scratch", ["x"])
    assert store.table_exists("scratch")
    assert store.delete_table("scratch")
    assert not store.delete_table("scratch")
    assert store.get_table("scratch") is None


def test_create_table_keeps_existing_rows():
    store = ResultStore()
    store.create_table("t", ["x"])
    store.add_row("t", (1,))
    store.create_table("t", ["x"])
    assert store.get_table("t").rows == [(1,)]


def test_manifest_hashes_outputs(tmp_path):
    store = ResultStore()
    store.create_table("dipole", ["z_nm"])
    store.add_row("dipole", (20.0,))
    paths = store.write_all(str(tmp_path))
    manifest = RunManifest(config_hash="abc", subcommand="dipole", started_at="2026-01-01T00:00:00Z",
                           tool_version="0.1.0")
    path = write_manifest(str(tmp_path), manifest, paths)
    data = json.loads(open(path, encoding="utf-8").read())
    assert data["subcommand"] == "dipole"
    assert data["status"] == "ok"
    assert data["outputs"] == [{"file": "dipole.csv", "sha256": file_sha256(paths[0])}]
