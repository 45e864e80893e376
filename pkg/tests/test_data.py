import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapleyvic import synthetic
from shapleyvic.data import (
    CATEGORICAL,
    CONTINUOUS,
    Dataset,
    DataSplit,
    Schema,
    all_subsets,
    load_csv,
    make_subsets,
    split_dataset,
    write_csv,
)
from shapleyvic.errors import ValidationError


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _index_dataset(n, y=None):
    y = np.arange(n) % 2 if y is None else y
    return Dataset(np.zeros((n, 2)), y, ("a", "b"), (CONTINUOUS, CONTINUOUS))


def _one_column_split(values, kind=CONTINUOUS):
    values = np.asarray(values, dtype=float)
    n = values.size
    ds = Dataset(
        np.column_stack([values, np.zeros(n)]),
        np.arange(n) % 2,
        ("v", "z"),
        (kind, CONTINUOUS),
    )
    split = DataSplit(np.arange(n), np.array([], dtype=int), np.array([], dtype=int), seed=0)
    return ds, split


class TestLoadCsv:
    def test_small_file(self, tmp_path):
        p = _write(tmp_path, "age,sex,died\n71,M,1\n45,F,0\n60,F,0\n83,M,1\n")
        ds = load_csv(p, {"outcome": "died", "categorical": ["sex"]})
        assert (ds.n, ds.d) == (4, 2)
        assert ds.var_names == ("age", "sex")
        assert ds.var_kinds == (CONTINUOUS, CATEGORICAL)
        assert ds.features[:, 1].tolist() == [0, 1, 1, 0]
        assert ds.levels == {"sex": ("M", "F")}
        assert ds.outcome.tolist() == [1, 0, 0, 1]

    def test_schema_column_order(self, tmp_path):
        p = _write(tmp_path, "a,y,b\n1,0,2\n3,1,4\n")
        ds = load_csv(p, {"outcome": "y", "features": ["b", "a"]})
        assert ds.var_names == ("b", "a")
        assert ds.features.tolist() == [[2, 1], [4, 3]]

    def test_empty_cell_names_row_and_column(self, tmp_path):
        p = _write(tmp_path, "age,bp,died\n71,120,1\n45,,0\n")
        with pytest.raises(ValidationError, match=r"row 3.*'bp'"):
            load_csv(p, {"outcome": "died"})

    def test_unparseable_cell(self, tmp_path):
        p = _write(tmp_path, "age,bp,died\n71,high,1\n")
        with pytest.raises(ValidationError, match=r"'high'.*row 2.*'bp'"):
            load_csv(p, {"outcome": "died"})

    def test_outcome_outside_binary(self, tmp_path):
        p = _write(tmp_path, "age,bp,died\n71,120,2\n")
        with pytest.raises(ValidationError, match="not 0 or 1"):
            load_csv(p, {"outcome": "died"})

    def test_duplicate_column(self, tmp_path):
        p = _write(tmp_path, "age,age,died\n1,2,0\n")
        with pytest.raises(ValidationError, match="duplicate"):
            load_csv(p, {"outcome": "died"})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError, match="not found"):
            load_csv(tmp_path / "nope.csv", {"outcome": "y"})

    def test_round_trip_generated(self, tmp_path):
        ds = synthetic.make_logistic_dataset(1000, (1.0, -0.5, 0.0, 2.0, 0.3), seed=4, categorical=[1])
        schema = write_csv(ds, tmp_path / "syn.csv")
        (tmp_path / "schema.json").write_text(json.dumps(schema.to_dict()))
        again = load_csv(tmp_path / "syn.csv", Schema.load(tmp_path / "schema.json"))
        assert again == ds
        assert again.n == 1000 and again.d == 5


class TestDatasetInvariants:
    def test_rejects_missing_values(self):
        with pytest.raises(ValidationError):
            Dataset(np.array([[1.0, np.nan]]), [0], ("a", "b"), (CONTINUOUS, CONTINUOUS))

    def test_rejects_duplicate_names(self):
        with pytest.raises(ValidationError):
            Dataset(np.zeros((1, 2)), [0], ("a", "a"), (CONTINUOUS, CONTINUOUS))

    def test_needs_two_variables(self):
        with pytest.raises(ValidationError):
            Dataset(np.zeros((3, 1)), [0, 1, 0], ("a",), (CONTINUOUS,))

    def test_immutable(self):
        ds = _index_dataset(4)
        with pytest.raises(ValueError):
            ds.features[0, 0] = 1.0


class TestSplit:
    def test_large_protocol_sizes(self):
        ds = _index_dataset(46318)
        sp = split_dataset(ds, explain_count=2486, train_frac=0.8, seed=2017)
        assert sp.explain_idx.size == 2486
        assert abs(sp.train_idx.size - 35066) <= 1
        assert abs(sp.valid_idx.size - 8766) <= 1

    def test_exact_halves(self):
        sp = split_dataset(_index_dataset(10), explain_count=0, train_frac=0.5, seed=1)
        assert (sp.train_idx.size, sp.valid_idx.size, sp.explain_idx.size) == (5, 5, 0)

    def test_deterministic(self):
        ds = _index_dataset(500)
        assert split_dataset(ds, 50, 0.7, 9) == split_dataset(ds, 50, 0.7, 9)
        assert split_dataset(ds, 50, 0.7, 9) != split_dataset(ds, 50, 0.7, 10)

    def test_explain_count_too_large(self):
        with pytest.raises(ValidationError):
            split_dataset(_index_dataset(10), 10, 0.5, 0)

    def test_train_missing_class(self):
        y = np.zeros(20, dtype=int)
        y[0] = 1
        ds = _index_dataset(20, y)
        with pytest.raises(ValidationError, match="class"):
            split_dataset(ds, explain_count=19, train_frac=0.5, seed=0)

    @settings(max_examples=60, deadline=None)
    @given(
        n=st.integers(4, 400),
        explain_frac=st.floats(0, 0.5),
        train_frac=st.floats(0.2, 0.95),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_partition(self, n, explain_frac, train_frac, seed):
        ds = _index_dataset(n)
        try:
            sp = split_dataset(ds, int(explain_frac * n), train_frac, seed)
        except ValidationError:
            return  # training split drew a single class
        allidx = np.concatenate([sp.train_idx, sp.valid_idx, sp.explain_idx])
        assert np.array_equal(np.sort(allidx), np.arange(n))

    def test_json_round_trip(self):
        sp = split_dataset(_index_dataset(50), 5, 0.8, 1)
        assert DataSplit.from_dict(json.loads(json.dumps(sp.to_dict()))) == sp


class TestSubsets:
    def test_uniform_quartiles(self):
        ds, sp = _one_column_split(np.arange(1, 101), CONTINUOUS)
        subs = make_subsets(ds, sp, 0, n_bins=4, min_subset_size=1)
        assert [s.size for s in subs] == [25, 25, 25, 25]
        assert ds.features[subs[0].member_idx, 0].max() == 25

    def test_binary_categorical(self):
        vals = np.array([0, 1] * 150)
        ds, sp = _one_column_split(vals, CATEGORICAL)
        subs = make_subsets(ds, sp, 0)
        assert len(subs) == 2
        assert sum(s.size for s in subs) == sp.train_idx.size

    def test_skewed_column_merges(self):
        vals = np.concatenate([np.full(90, 3.0), np.arange(10.0, 20.0)])
        ds, sp = _one_column_split(vals)
        subs = make_subsets(ds, sp, 0, n_bins=4, min_subset_size=50)
        assert all(s.size >= 50 for s in subs)
        members = np.concatenate([s.member_idx for s in subs])
        assert np.array_equal(np.sort(members), sp.train_idx)

    def test_skewed_larger_sample_keeps_several_bins(self):
        vals = np.concatenate([np.full(900, 0.0), np.linspace(1, 2, 300)])
        ds, sp = _one_column_split(vals)
        subs = make_subsets(ds, sp, 0, n_bins=4, min_subset_size=50)
        assert len(subs) >= 2
        assert all(s.size >= 50 for s in subs)

    def test_tie_at_boundary_goes_lower(self):
        vals = np.array([1.0] * 60 + [2.0] * 60 + [3.0] * 60 + [4.0] * 60)
        ds, sp = _one_column_split(vals)
        subs = make_subsets(ds, sp, 0, n_bins=4, min_subset_size=1)
        assert [s.size for s in subs] == [60, 60, 60, 60]
        for s in subs:
            assert np.unique(ds.features[s.member_idx, 0]).size == 1

    def test_nonlinear_monotone_transform(self, rng):
        vals = np.round(rng.normal(size=400), 3)
        ds, sp = _one_column_split(vals)
        ds2, _ = _one_column_split(np.exp(vals))
        a = make_subsets(ds, sp, 0)
        b = make_subsets(ds2, sp, 0)
        assert [s.member_idx.tolist() for s in a] == [s.member_idx.tolist() for s in b]

    def test_constant_variable_gives_nothing(self):
        ds, sp = _one_column_split(np.full(100, 7.0))
        assert make_subsets(ds, sp, 0) == []

    def test_bad_variable_index(self):
        ds, sp = _one_column_split(np.arange(10))
        with pytest.raises(ValidationError):
            make_subsets(ds, sp, 5)

    def test_all_subsets_partition_every_variable(self, small_ds, small_split):
        subs = all_subsets(small_ds, small_split)
        for j in range(small_ds.d):
            members = np.concatenate([s.member_idx for s in subs if s.variable_index == j])
            assert np.array_equal(np.sort(members), small_split.train_idx)

    @settings(max_examples=50, deadline=None)
    @given(
        vals=st.lists(st.floats(-50, 50, allow_nan=False), min_size=20, max_size=300),
        n_bins=st.integers(2, 6),
        min_size=st.integers(1, 40),
    )
    def test_partition_and_monotone_invariance(self, vals, n_bins, min_size):
        ds, sp = _one_column_split(vals)
        subs = make_subsets(ds, sp, 0, n_bins=n_bins, min_subset_size=min_size)
        if not subs:
            assert np.all(ds.features[:, 0] == ds.features[0, 0])
            return
        members = np.concatenate([s.member_idx for s in subs])
        assert np.array_equal(np.sort(members), sp.train_idx)
        if len(subs) > 1:
            assert all(s.size >= min_size for s in subs)
        # scaling by a power of two is exact, so distinct floats stay distinct
        ds2, _ = _one_column_split(np.asarray(vals) * 4.0)
        subs2 = make_subsets(ds2, sp, 0, n_bins=n_bins, min_subset_size=min_size)
        assert [s.member_idx.tolist() for s in subs] == [s.member_idx.tolist() for s in subs2]
