import logging

import numpy as np
import pytest

from rome.data import Standardizer, ingest_csv, make_splits, split_indices
from rome.errors import ConfigError, EmptyDatasetError, SchemaError
from rome.models.core import Dataset, FeatureSpec

SPEC = FeatureSpec(["A1"], ["S1"], "Y", [0], [0])


def _write(tmp_path, text):
    path = tmp_path / "data.csv"
    path.write_text(text)
    return path


def test_ingest_three_rows(tmp_path):
    path = _write(tmp_path, "A1,S1,Y,extra\n1,0,2.5,x\n2,1,3.5,y\n3,0,1.0,z\n")
    data = ingest_csv(path, SPEC)
    assert data.n == 3
    assert data.y.tolist() == [2.5, 3.5, 1.0]
    assert data.labels is None


def test_missing_outcome_row_is_dropped_and_logged(tmp_path, caplog):
    path = _write(tmp_path, "A1,S1,Y\n1,0,2.5\n2,1,\n3,0,1.0\n")
    with caplog.at_level(logging.WARNING, logger="rome.data"):
        data = ingest_csv(path, SPEC)
    assert data.n == 2
    assert "dropped 1 of 3 rows" in caplog.text


def test_non_numeric_cell_is_dropped(tmp_path):
    path = _write(tmp_path, "A1,S1,Y\n1,0,2.5\nabc,1,3\n")
    assert ingest_csv(path, SPEC).n == 1


def test_non_finite_cells_are_dropped(tmp_path, caplog):
    path = _write(tmp_path, "A1,S1,Y\n1,2,3\ninf,1,1\n2,-inf,4\n2,3,4\n")
    with caplog.at_level(logging.WARNING, logger="rome.data"):
        data = ingest_csv(path, SPEC)
    assert data.n == 2
    assert np.isfinite(data.a).all() and np.isfinite(data.s).all()
    assert "dropped 2 of 4 rows" in caplog.text


def test_missing_column_is_named(tmp_path):
    path = _write(tmp_path, "A1,Y\n1,2\n")
    with pytest.raises(SchemaError, match="'S1'"):
        ingest_csv(path, SPEC)


def test_no_usable_rows(tmp_path):
    path = _write(tmp_path, "A1,S1,Y\n,,\nx,y,z\n")
    with pytest.raises(EmptyDatasetError):
        ingest_csv(path, SPEC)


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        ingest_csv(tmp_path / "nope.csv", SPEC)


def test_group_column_becomes_labels(tmp_path):
    path = _write(tmp_path, "A1,S1,Y,g\n1,0,2.5,1\n2,1,3.5,0\n")
    assert ingest_csv(path, SPEC, "g").labels.tolist() == [1, 0]


def test_split_sizes_and_disjointness():
    train, val, test = split_indices(101, [0.6, 0.2, 0.2], seed=3)
    assert (len(train), len(val), len(test)) == (60, 20, 21)
    joined = np.concatenate([train, val, test])
    assert sorted(joined.tolist()) == list(range(101))
    again = split_indices(101, [0.6, 0.2, 0.2], seed=3)
    assert all(np.array_equal(x, y) for x, y in zip((train, val, test), again))


@pytest.mark.parametrize("fractions", [[0.5, 0.5], [0.6, 0.3, 0.3], [1.0, 0.0, 0.0]])
def test_bad_fractions(fractions):
    with pytest.raises(ConfigError):
        split_indices(10, fractions, seed=0)


def test_too_few_rows_for_split():
    with pytest.raises(EmptyDatasetError):
        split_indices(3, [0.6, 0.2, 0.2], seed=0)


def test_standardizer_learns_on_train_only():
    rng = np.random.default_rng(0)
    n = 200
    data = Dataset(rng.normal(3.0, 2.0, size=(n, 1)), np.ones((n, 1)), rng.normal(-1.0, 5.0, size=n), SPEC)
    splits = make_splits(data, [0.6, 0.2, 0.2], seed=1)
    assert splits.train.a.mean() == pytest.approx(0.0, abs=1e-12)
    assert splits.train.a.std() == pytest.approx(1.0)
    assert splits.train.y.std() == pytest.approx(1.0)
    # constant sensitive column: centred, not scaled
    assert np.array_equal(splits.train.s, np.zeros((120, 1)))
    assert splits.scaler.s_sd.tolist() == [1.0]
    scaler = Standardizer.fit(data.subset(split_indices(n, [0.6, 0.2, 0.2], 1)[0]))
    assert np.allclose(splits.test.a, scaler.apply(data.subset(split_indices(n, [0.6, 0.2, 0.2], 1)[2])).a)


def test_splits_without_standardizing_keep_raw_values():
    data = Dataset(np.arange(10.0)[:, None], np.zeros((10, 1)), np.arange(10.0), SPEC)
    splits = make_splits(data, [0.6, 0.2, 0.2], seed=0, standardize=False)
    assert np.array_equal(splits.train.y, splits.train.a[:, 0])
    assert set(splits.train.y) | set(splits.val.y) | set(splits.test.y) == set(range(10))
