"""Pseudo-balance: a base predictor that looks calibrated overall but is biased per bucket.

We fabricate a first stage whose aggregate ratio mean(y_hat0)/mean(y) is ~1
while short watches are over-predicted and long ones under-predicted, then
train the duration-aware correction on top of it and compare bucket ratios.

    python demos/01_pseudo_balance.py
"""
import numpy as np

from wtdebias.benchmarks import build_benchmark, run_variant
from wtdebias.evaluation import bucket_report, max_ratio_deviation

bench = build_benchmark("pseudo_balance", n=20_000, seed=0)
y0 = bench.outputs[2].y_hat0
print(f"test impressions: {len(bench.test)}, base MAE {bench.base_test_mae:.3f}")

run = run_variant(bench, "full")
rep = bucket_report(bench.test, run.y_hat, y0, bench.bucketing)
print(f"global ratio  base {rep['global_base_bias_ratio']:.3f}  corrected {rep['global_bias_ratio']:.3f}")
print(f"{'watch bucket':>14} {'count':>6} {'base':>6} {'corr':>6}")
for row in rep["watch_time"]:
    if row["count"]:
        print(f"{row['bucket']:>14} {row['count']:>6} {row['base_bias_ratio']:6.2f} {row['bias_ratio']:6.2f}")
print(f"max |ratio-1|: base {max_ratio_deviation(rep['watch_time'], 'base_bias_ratio'):.2f}, "
      f"corrected {max_ratio_deviation(rep['watch_time']):.2f}")
print(f"MAE {run.base_mae:.3f} -> {run.test_mae:.3f};  XAUC {run.base_xauc:.4f} -> {run.test_xauc:.4f}")
print("learned lambdas per duration group:", np.round(run.model.lambdas.data, 3))
