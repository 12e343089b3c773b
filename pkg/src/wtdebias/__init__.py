"""Distribution-aware multiplicative debiasing of watch-time predictions.

A frozen first-stage predictor gives ``y_hat0``; a second-stage network
learns a correction factor ``b`` per impression in a group-specific Box-Cox
space, with one expert per duration group and auxiliary engagement signals.
"""
from .benchmarks import Benchmark, build_benchmark, run_variant
from .correction import Batch, CorrectionConfig, DadfModel, make_batch, predict_corrected
from .data import (
    AUX_TASKS, Bucketing, CsvSchema, DataError, GeneratorConfig, Impression, Impressions, SplitSpec,
    fit_bucketing, generate_synthetic, ingest_csv, split,
)
from .evaluation import bucket_report, bucket_sensitivity_sweep, evaluate, factor_distribution_report, tail_slice_report
from .first_stage import BiasProfile, FirstStageOutputs, biased_oracle_first_stage, freeze_and_emit, train_vr, train_wlr
from .metrics import mae, per_user_xauc, xauc
from .theory import check_long_tail_inheritance, check_oracle_risk
from .training import VARIANTS, LossWeights, TrainHyper, make_label, train_dadf, train_variant
from .transform import TransformParams, boxcox, boxcox_inverse

__version__ = "0.1.0"
