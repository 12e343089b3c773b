import numpy as np
import pytest

from wtdebias.data import Impressions, fit_bucketing
from wtdebias.evaluation import (
    bucket_report, bucket_sensitivity_sweep, evaluate, factor_distribution_report, max_ratio_deviation, run_tag,
    tail_slice_report, write_report,
)
from wtdebias.metrics import mae


def _data(n=600, seed=0):
    rng = np.random.default_rng(seed)
    d = rng.uniform(5, 300, n)
    y = np.minimum(d, rng.lognormal(2.5, 1.0, n))
    return Impressions(rng.integers(0, 20, n), np.arange(n), rng.normal(size=(n, 3)), d, y, np.zeros((n, 5)))


def test_bucket_counts_and_identity():
    data = _data()
    bk = fit_bucketing(data.duration_s, 4)
    rep = bucket_report(data, data.watch_time_s, data.watch_time_s * 1.3, bk)
    assert sum(r["count"] for r in rep["duration"]) == len(data)
    assert sum(r["count"] for r in rep["watch_time"]) == len(data)
    assert rep["global_bias_ratio"] == pytest.approx(1.0)
    for r in rep["duration"] + rep["watch_time"]:
        if r["count"]:
            assert r["bias_ratio"] == pytest.approx(1.0) and r["mae"] == 0.0
    assert max_ratio_deviation(rep["watch_time"], "base_bias_ratio") == pytest.approx(0.3)


def test_bucket_mae_recomposes():
    data = _data()
    rng = np.random.default_rng(1)
    pred = data.watch_time_s * rng.lognormal(0, 0.3, len(data))
    rep = bucket_report(data, pred, pred, fit_bucketing(data.duration_s, 4))
    total = sum(r["count"] * r["mae"] for r in rep["duration"] if r["count"]) / len(data)
    assert abs(total - mae(data.watch_time_s, pred)) < 1e-9


def test_empty_bucket_row():
    data = _data()
    data.watch_time_s[:] = np.minimum(data.watch_time_s, 100.0)
    rep = bucket_report(data, data.watch_time_s, data.watch_time_s, fit_bucketing(data.duration_s, 2))
    last = rep["watch_time"][-1]
    assert last["bucket"] == "[200,inf)" and last["count"] == 0 and last["bias_ratio"] is None


def test_tail_slices():
    data = _data()
    base = data.watch_time_s * 1.5 + 1.0
    # a uniform improvement: every prediction moves halfway to the truth
    pred = 0.5 * (base + data.watch_time_s)
    rows = tail_slice_report(data, pred, base)
    assert [r["slice"] for r in rows] == ["all", "tail_20", "tail_10"]
    assert [r["count"] for r in rows] == [600, 120, 60]
    for r in rows:
        assert r["mae_reduction"] == pytest.approx(0.5)
    assert rows[2]["small_slice"] and not rows[0]["small_slice"]


def test_factor_distribution_unit_factor():
    b = np.ones(50)
    rep = factor_distribution_report(b, np.zeros(50), np.repeat([0, 1], 25), [0.5, 0.2])
    g = rep["groups"][0]
    assert all(v == 1.0 for v in g["raw"]["quantiles"].values())
    assert g["raw"]["skewness"] == 0.0
    assert all(v == 0.0 for v in g["transformed"]["quantiles"].values())
    assert rep["lambda_trend"] == "decreasing"


def test_sweep_summary():
    res = bucket_sensitivity_sweep([2, 4], lambda K: (10.0 + K, 0.8))
    assert res["mae_relative_range"] == pytest.approx(2 / 12)
    with pytest.raises(ValueError):
        bucket_sensitivity_sweep([0], lambda K: (1.0, 1.0))


def test_evaluate_and_write(tmp_path):
    data = _data()
    bk = fit_bucketing(data.duration_s, 4)
    rep = evaluate(data, data.watch_time_s * 1.1, data.watch_time_s * 1.4, bk, lambdas=[1, 0.5, 0.4, 0.3],
                   variant="global_correction")
    assert rep.xauc == 1.0 and rep.mae < rep.base_mae
    assert any("TranSUN" in n for n in rep.notes)
    tag = run_tag("r1", "full", 4, 0)
    paths = write_report(rep, tmp_path, tag)
    assert all(p.exists() and p.name.startswith(tag) for p in paths)
    assert (tmp_path / f"{tag}_report.json").exists()
