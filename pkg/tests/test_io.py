import numpy as np
import pytest

from snse2d.errors import DimensionError, FormatError
from snse2d.fields import Grid, normalized, random_divfree_field
from snse2d.io import (MAGIC, read_csv, read_field_snapshot, write_csv, write_field_snapshot,
                       write_path_csv)
from snse2d.noise import ou_trajectory, sample_wiener_path


def test_snapshot_round_trip(tmp_path, grid16):
    f = normalized(random_divfree_field(4, grid16))
    p = tmp_path / "a.snse"
    write_field_snapshot(f, p)
    g = read_field_snapshot(p)
    assert g.grid == grid16
    assert np.array_equal(g.coeffs, f.coeffs)
    assert read_field_snapshot(p, grid16).equals(f)


def test_snapshot_bad_magic(tmp_path, grid16):
    p = tmp_path / "a.snse"
    write_field_snapshot(random_divfree_field(1, grid16), p)
    raw = bytearray(p.read_bytes())
    raw[0:8] = b"NOTSNSE!"
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="offset 0"):
        read_field_snapshot(p)


def test_snapshot_truncated(tmp_path, grid16):
    p = tmp_path / "a.snse"
    write_field_snapshot(random_divfree_field(1, grid16), p)
    raw = p.read_bytes()
    p.write_bytes(raw[:-100])
    with pytest.raises(FormatError, match="truncated"):
        read_field_snapshot(p)
    p.write_bytes(MAGIC + b"\x00")
    with pytest.raises(FormatError, match="header truncated"):
        read_field_snapshot(p)


def test_snapshot_grid_mismatch(tmp_path, grid16):
    p = tmp_path / "a.snse"
    write_field_snapshot(random_divfree_field(1, grid16), p)
    with pytest.raises(DimensionError):
        read_field_snapshot(p, Grid(32))
    p.write_bytes(p.read_bytes() + b"\x00" * 16)
    with pytest.raises(DimensionError):
        read_field_snapshot(p)


def test_csv_round_trip(tmp_path):
    rows = [(0, 0.1, 1e-300), (1, -2.5, 3.0)]
    p = write_csv(tmp_path / "sub" / "x.csv", ["k", "a", "b"], rows, {"seed": 3, "tag": [1, 2]})
    meta, cols, data = read_csv(p)
    assert cols == ["k", "a", "b"]
    assert meta == {"seed": "3", "tag": "[1, 2]"}
    np.testing.assert_array_equal(data, np.array(rows, dtype=float))


def test_path_csv_columns(tmp_path):
    w = sample_wiener_path(2, -1, 1, 0.1)
    ou = ou_trajectory(w, 1.0)
    meta, cols, data = read_csv(write_path_csv(tmp_path / "p.csv", w, ou))
    assert cols == ["t", "W", "y", "z"]
    assert meta["seed"] == "2"
    np.testing.assert_array_equal(data[:, 1], w.values)
    np.testing.assert_allclose(data[:, 3], np.exp(-data[:, 2]))


def test_csv_no_header(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("# a=1\n")
    with pytest.raises(FormatError):
        read_csv(p)
