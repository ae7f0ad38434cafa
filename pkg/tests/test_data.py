import numpy as np
import pytest

from drlogcon.data import IsoGrid, ObservedSample, default_grid, load_csv
from drlogcon.exceptions import DataError


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_csv_happy_path(tmp_path):
    p = write(tmp_path, "x1,x2,A,Y\n0.1,0.2,1,3.0\n0.3,0.4,0,4.5\n0.5,0.6,1,5.0\n")
    s = load_csv(p, ["x1", "x2"], "A", "Y")
    assert s.n == 3 and s.d == 2
    np.testing.assert_array_equal(s.a, [1, 0, 1])
    np.testing.assert_allclose(s.y, [3.0, 4.5, 5.0])
    assert s.arm_mask(0).any() and s.arm_mask(1).any()


def test_load_csv_non_binary(tmp_path):
    p = write(tmp_path, "x1,A,Y\n0.1,2,3.0\n0.2,0,1.0\n")
    with pytest.raises(DataError, match="non-binary treatment"):
        load_csv(p, ["x1"], "A", "Y")


def test_load_csv_missing_column(tmp_path):
    p = write(tmp_path, "x1,A\n0.1,1\n0.2,0\n")
    with pytest.raises(DataError, match="missing column"):
        load_csv(p, ["x1"], "A", "Y")


def test_load_csv_non_numeric_and_empty(tmp_path):
    p = write(tmp_path, "x1,A,Y\n0.1,1,abc\n0.2,0,1\n")
    with pytest.raises(DataError, match="non-numeric"):
        load_csv(p, ["x1"], "A", "Y")
    with pytest.raises(DataError, match="empty"):
        load_csv(write(tmp_path, "", "e.csv"), ["x1"], "A", "Y")
    with pytest.raises(DataError, match="empty"):
        load_csv(write(tmp_path, "x1,A,Y\n", "h.csv"), ["x1"], "A", "Y")


def test_load_csv_delimiter_and_order(tmp_path):
    p = write(tmp_path, "Y;A;x\n3;1;9\n1;0;8\n2;1;7\n")
    s = load_csv(p, ["x"], "A", "Y", delimiter=";")
    np.testing.assert_array_equal(s.y, [3, 1, 2])
    np.testing.assert_array_equal(s.x[:, 0], [9, 8, 7])


def test_sample_validation():
    with pytest.raises(DataError):
        ObservedSample(np.zeros((3, 1)), [0, 1], [1, 2, 3])
    with pytest.raises(DataError):
        ObservedSample(np.zeros((2, 1)), [0, 1], [1, np.nan])
    with pytest.raises(DataError):
        ObservedSample(np.zeros((1, 1)), [1], [1.0])
    s = ObservedSample(np.zeros((2, 1)), [0, 1], [1, 2])
    with pytest.raises(ValueError):
        s.y[0] = 5.0


def test_default_grid_examples():
    s = ObservedSample(np.zeros((4, 1)), [1, 1, 1, 0], [2, 4, 10, 100])
    g = default_grid(s, 1)
    assert g.delta == 2.0 and g.lower == 0.0 and g.upper == 10.0
    np.testing.assert_array_equal(g.points, [0, 2, 4, 6, 8, 10])
    s2 = ObservedSample(np.zeros((2, 1)), [1, 1], [0, 1])
    np.testing.assert_array_equal(default_grid(s2, 1).points, [-0.5, 0, 0.5, 1])


def test_default_grid_errors():
    s = ObservedSample(np.zeros((4, 1)), [1, 1, 1, 0], [5, 5, 5, 1])
    with pytest.raises(DataError, match="degenerate grid"):
        default_grid(s, 1)
    s = ObservedSample(np.zeros((2, 1)), [0, 0], [5, 6])
    with pytest.raises(DataError, match="empty"):
        default_grid(s, 1)


def test_default_grid_invariants(rng):
    for _ in range(50):
        n = int(rng.integers(4, 300))
        y = rng.normal(size=n) * rng.uniform(0.1, 100)
        a = np.r_[1, 1, rng.integers(0, 2, size=n - 2)]
        s = ObservedSample(rng.normal(size=(n, 2)), a, y)
        g = default_grid(s, 1)
        ya = y[a == 1]
        assert g.m == n + 2
        assert g.upper == ya.max()
        assert g.lower < ya.min()
        gaps = np.diff(g.points)
        assert np.max(np.abs(gaps - g.delta)) <= 1e-12 * max(g.delta, np.abs(g.points).max())


def test_isogrid_rejects_bad_grids():
    with pytest.raises(DataError):
        IsoGrid(np.array([0.0, 1.0, 2.0]), 1.0)
    with pytest.raises(DataError):
        IsoGrid(np.array([0.0, 1.0, 2.5, 3.0]), 1.0)
