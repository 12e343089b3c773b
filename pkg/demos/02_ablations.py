"""Ablations and the global-correction baseline on one seed of the pseudo-balance benchmark.

``no_dist`` freezes lambda at 1 and drops the distribution regulariser,
``no_factor`` shares one expert across durations, ``no_aux`` removes the
auxiliary-signal branch, and ``global_correction`` is a single log-space
multiplicative corrector with none of the above.

    python demos/02_ablations.py
"""
from wtdebias.benchmarks import build_benchmark, run_variant
from wtdebias.training import VARIANTS

bench = build_benchmark("pseudo_balance", n=20_000, seed=1)
print(f"base: MAE {bench.base_test_mae:.3f}")
for variant in VARIANTS:
    run = run_variant(bench, variant)
    print(f"{variant:>18}: MAE {run.test_mae:.3f}  XAUC {run.test_xauc:.4f}  "
          f"epochs {len(run.result.history)}")
