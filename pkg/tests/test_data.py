import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mrconformal.data import Dataset, ModelSpec, load_csv, save_csv, split
from mrconformal.exceptions import DataError


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_y_field_means_missing(tmp_path):
    p = write(tmp_path, "x1,y\n0.5,1.0\n1.5,\n2.5,2.0\n")
    ds = load_csv(p, "y")
    assert ds.r.tolist() == [1, 0, 1]
    assert np.isnan(ds.y[1])
    assert ds.columns == ("x1",)


def test_explicit_r_column_overrides(tmp_path):
    p = write(tmp_path, "x1,y,r\n0.5,1.0,1\n1.5,2.0,1\n2.5,,0\n")
    ds = load_csv(p, "y", "r")
    assert ds.m == 2
    assert ds.r.tolist() == [1, 1, 0]


def test_r_column_can_hide_present_y(tmp_path):
    p = write(tmp_path, "x1,y,r\n0.5,1.0,1\n1.5,2.0,0\n")
    ds = load_csv(p, "y", "r")
    assert ds.r.tolist() == [1, 0]
    assert np.isnan(ds.y[1])


def test_r_one_with_missing_y_names_row(tmp_path):
    p = write(tmp_path, "x1,y,r\n0.5,1.0,1\n1.5,,1\n")
    with pytest.raises(DataError, match="row 2"):
        load_csv(p, "y", "r")


@pytest.mark.parametrize(
    "text, match",
    [
        ("x1,y\n0.5,1.0\nabc,2.0\n", "row 2"),
        ("x1,y\n0.5,1.0\n1.0,2.0,3.0\n", "row 2"),
        ("x1,z\n0.5,1.0\n", "y column"),
        ("", "header"),
    ],
)
def test_malformed_csv(tmp_path, text, match):
    with pytest.raises(DataError, match=match):
        load_csv(write(tmp_path, text), "y")


def test_dataset_invariants():
    ds = Dataset(np.ones((3, 2)), [1.0, 99.0, 2.0], [1, 0, 1])
    assert ds.m == 2
    assert np.isnan(ds.y[1])
    assert set(np.flatnonzero(np.isfinite(ds.y))) == set(np.flatnonzero(ds.r == 1))
    with pytest.raises(DataError):
        Dataset(np.ones((3, 2)), [1.0, np.nan, 2.0], [1, 1, 1])
    with pytest.raises(DataError):
        Dataset(np.array([[1.0], [np.nan]]), [1.0, 2.0], [1, 1])
    with pytest.raises(ValueError):
        ds.x[0, 0] = 5.0


def test_split_sizes_and_determinism():
    ds = Dataset(np.arange(10.0), np.arange(10.0), np.ones(10))
    a = split(ds, 0.5, 7)
    b = split(ds, 0.5, 7)
    assert a.train.size == 5 and a.calib.size == 5
    assert not set(a.train) & set(a.calib)
    np.testing.assert_array_equal(a.train, b.train)
    np.testing.assert_array_equal(a.calib, b.calib)


def test_split_default_scale():
    sp = split(1600, 0.5, 1)
    assert sp.train.size == 800 and sp.calib.size == 800


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.2, 1.5])
def test_split_rejects_fraction(fraction):
    with pytest.raises(ValueError):
        split(10, fraction, 0)


@given(st.integers(2, 500), st.floats(0.01, 0.99), st.integers(0, 2**32))
def test_split_is_partition(n, fraction, seed):
    try:
        sp = split(n, fraction, seed)
    except ValueError:
        return
    assert sorted(np.concatenate([sp.train, sp.calib]).tolist()) == list(range(n))


finite = st.floats(-1e300, 1e300, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(
    arrays(float, st.tuples(st.integers(1, 12), st.integers(1, 4)), elements=finite),
    st.data(),
)
def test_csv_round_trip(tmp_path_factory, x, data):
    n = x.shape[0]
    y = data.draw(arrays(float, n, elements=finite))
    r = data.draw(arrays(np.int8, n, elements=st.integers(0, 1)))
    ds = Dataset(x, y, r)
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    save_csv(ds, path, r_column=None)
    assert load_csv(path, "y").equals(ds)
    save_csv(ds, path, r_column="r")
    assert load_csv(path, "y", "r").equals(ds)


def test_model_spec_design_and_validation():
    ds = Dataset(np.arange(6.0).reshape(3, 2), [1.0, 2.0, 3.0], [1, 1, 1])
    spec = ModelSpec("outcome", (1,))
    np.testing.assert_array_equal(spec.design(ds.x), [[1, 1], [1, 3], [1, 5]])
    with pytest.raises(ValueError):
        ModelSpec("outcome", (0, 0))
    with pytest.raises(ValueError):
        ModelSpec("weird", ())
    with pytest.raises(DataError):
        ModelSpec("outcome", (2,)).validate(ds)
