import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from wtdebias.data import (
    CsvSchema, DataError, GeneratorConfig, Impressions, SplitSpec, fit_bucketing, generate_synthetic,
    ingest_csv, read_dataset_csv, split, split_sizes, write_csv,
)


def test_generator_empty():
    assert len(generate_synthetic(0)) == 0


def test_generator_deterministic():
    a, b = generate_synthetic(500, seed=3), generate_synthetic(500, seed=3)
    np.testing.assert_array_equal(a.watch_time_s, b.watch_time_s)
    np.testing.assert_array_equal(a.features, b.features)


def test_generator_long_tail():
    y = generate_synthetic(100_000, seed=0).watch_time_s
    assert stats.skew(y) > 1.5
    assert np.mean(y > y.mean() + 3 * y.std()) > 0.005


def test_generator_invariants(small_data):
    assert np.all(small_data.watch_time_s >= 0)
    assert np.all(small_data.watch_time_s <= small_data.duration_s + 1e-3)
    assert np.all(small_data.duration_s > 0)
    assert set(np.unique(small_data.aux_labels)) <= {0.0, 1.0}


def test_generator_rejects_bad_config():
    with pytest.raises(DataError):
        generate_synthetic(10, config=GeneratorConfig(skip_prob=1.5))


def test_split_sizes_examples():
    assert split_sizes(10, (0.8, 0.1, 0.1)) == (8, 1, 1)
    assert split_sizes(9, (0.8, 0.1, 0.1)) == (7, 1, 1)


@given(st.integers(1, 5000))
def test_split_sizes_partition(n):
    sizes = split_sizes(n, (0.8, 0.1, 0.1))
    assert sum(sizes) == n and min(sizes) >= 0
    assert all(abs(s - n * f) < 1 for s, f in zip(sizes, (0.8, 0.1, 0.1)))


def test_split_independent_of_row_order(small_data):
    perm = np.random.default_rng(1).permutation(len(small_data))
    a = split(small_data, SplitSpec(seed=4))
    b = split(small_data.subset(perm), SplitSpec(seed=4))
    for pa, pb in zip(a, b):
        assert sorted(pa.row_index) == sorted(pb.row_index)


def test_split_is_partition(small_data):
    parts = split(small_data, SplitSpec(seed=0))
    rows = np.concatenate([p.row_index for p in parts])
    assert len(rows) == len(small_data) and len(np.unique(rows)) == len(rows)
    assert [len(p) for p in parts] == [2400, 300, 300]


def test_csv_roundtrip(tmp_path, small_data):
    part = small_data.subset(np.arange(50))
    write_csv(part, tmp_path / "d.csv")
    back = read_dataset_csv(tmp_path / "d.csv")
    for name in ("user_id", "item_id", "features", "duration_s", "watch_time_s", "aux_labels", "row_index"):
        np.testing.assert_array_equal(getattr(back, name), getattr(part, name))


def test_ingest_drops_invalid_rows(tmp_path):
    p = tmp_path / "log.csv"
    p.write_text("user_id,item_id,duration_s,watch_time_s\n1,2,10,4\n1,3,0,4\n2,2,10,-1\n3,3,x,1\n4,4,20,20\n")
    data, rep = ingest_csv(p)
    assert len(data) == 2 and rep.rejected == 3
    assert rep.reasons == {"non_positive_duration": 1, "negative_watch_time": 1, "non_numeric": 1}


def test_ingest_valid_file(tmp_path):
    p = tmp_path / "log.csv"
    p.write_text("user_id,item_id,duration_s,watch_time_s\n1,2,10,4\n1,3,5,4\n2,2,10,1\n")
    assert len(ingest_csv(p)[0]) == 3


def test_ingest_missing_column_and_file(tmp_path):
    p = tmp_path / "log.csv"
    p.write_text("user_id,item_id,duration_s\n1,2,10\n")
    with pytest.raises(DataError, match="watch_time_s"):
        ingest_csv(p)
    with pytest.raises(FileNotFoundError):
        ingest_csv(tmp_path / "nope.csv")


def test_kuairec_milliseconds(tmp_path):
    p = tmp_path / "small_matrix.csv"
    p.write_text("user_id,video_id,play_duration,video_duration,time,date,timestamp,watch_ratio\n"
                 "14,148,4381,6067,x,20200705,1593898000.0,0.72\n")
    data, rep = ingest_csv(p, CsvSchema.kuairec())
    assert rep.rejected == 0
    assert data.watch_time_s[0] == pytest.approx(4.381)
    assert data.duration_s[0] == pytest.approx(6.067)
    assert data.item_id[0] == 148


def test_bucketing_equal_frequency():
    bk = fit_bucketing(np.arange(1.0, 9.0), 4)
    np.testing.assert_allclose(bk.boundaries, [2.75, 4.5, 6.25])
    assert np.bincount(bk(np.arange(1.0, 9.0))).tolist() == [2, 2, 2, 2]


def test_bucketing_fixed_and_ties():
    bk = fit_bucketing([], 4, mode="fixed", boundaries=(20, 40, 180))
    assert bk([10, 25, 200]).tolist() == [0, 1, 3]
    assert bk([20, 40, 180]).tolist() == [1, 2, 3]


def test_bucketing_single_group():
    bk = fit_bucketing(np.arange(10.0), 1)
    assert bk.K == 1 and np.all(bk(np.arange(10.0)) == 0)


def test_bucketing_errors():
    with pytest.raises(DataError):
        fit_bucketing([1.0, 1.0, 2.0], 3)
    with pytest.raises(DataError):
        fit_bucketing([], 3, mode="fixed", boundaries=(5, 3))


@given(st.lists(st.floats(1.0, 300.0), min_size=20, max_size=200), st.integers(1, 6))
def test_bucketing_total_and_monotone(durations, K):
    durations = np.array(durations)
    try:
        bk = fit_bucketing(durations, K)
    except DataError:
        return
    g = bk(durations)
    assert g.min() >= 0 and g.max() < K
    order = np.argsort(durations)
    assert np.all(np.diff(g[order]) >= 0)
