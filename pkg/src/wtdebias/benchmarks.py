"""Controlled synthetic benchmarks with a fabricated, biased first stage.

``pseudo_balance``
    The base predictor is unbiased in aggregate (global ratio ~1) while it
    over-predicts short watches and under-predicts long ones, more strongly on
    long videos.  A small fraction of impressions is badly under-predicted,
    which gives the correction factor a heavy right tail.
``long_duration_bias``
    A mild watch-time bias everywhere plus a systematic under-prediction that
    deepens over the top two duration deciles.  Its duration groups are cut at
    the train quantiles 0.5, 0.8 and 0.9, so the correction can see the regions
    where the bias lives.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .correction import Batch, CorrectionConfig, DadfModel, make_batch
from .data import Bucketing, GeneratorConfig, Impressions, SplitSpec, fit_bucketing, generate_synthetic, split
from .first_stage import BiasProfile, FirstStageOutputs, OracleSignalConfig, biased_oracle_first_stage
from .metrics import mae, xauc
from .training import LossWeights, TrainHyper, TrainResult, train_variant

BENCHMARKS = ("pseudo_balance", "long_duration_bias")


def pseudo_balance_profile() -> BiasProfile:
    return BiasProfile(
        duration_edges=(30.0, 90.0),
        duration_strength=(0.6, 1.0, 1.5),
        noise_sigma=0.5,
        outlier_prob=0.05,
        outlier_scale=10.0,
    )


def long_duration_profile(train: Impressions) -> BiasProfile:
    """Systematic under-prediction that deepens across the top duration quantiles of the training split."""
    q80, q90 = _tail_cuts(train)[1:]
    return BiasProfile(
        duration_edges=(float(q80), float(q90)),
        duration_strength=(0.3, 0.3, 0.3),
        duration_factors=(1.0, 0.6, 0.4),
        noise_sigma=0.5,
        outlier_prob=0.05,
        outlier_scale=10.0,
    )


def _tail_cuts(train: Impressions) -> tuple[float, float, float]:
    return tuple(float(q) for q in np.quantile(train.duration_s, [0.5, 0.8, 0.9]))


@dataclass
class Benchmark:
    name: str
    seed: int
    train: Impressions
    val: Impressions
    test: Impressions
    outputs: tuple[FirstStageOutputs, FirstStageOutputs, FirstStageOutputs]
    profile: BiasProfile
    bucketing: Bucketing

    def batches(self, bucketing: Bucketing | None = None) -> tuple[Batch, Batch, Batch]:
        bk = bucketing or self.bucketing
        return tuple(make_batch(d, o, bk) for d, o in zip((self.train, self.val, self.test), self.outputs))

    @property
    def base_test_mae(self) -> float:
        return mae(self.test.watch_time_s, self.outputs[2].y_hat0)


def fabricate_first_stage(
    name: str,
    train: Impressions,
    parts: tuple[Impressions, ...],
    seed: int = 0,
    signals: OracleSignalConfig | None = None,
) -> tuple[tuple[FirstStageOutputs, ...], BiasProfile]:
    """Biased oracle outputs for each of ``parts`` under the named construction (profile fitted on ``train``)."""
    if name == "pseudo_balance":
        profile = pseudo_balance_profile().balanced(train)
    elif name == "long_duration_bias":
        # left unscaled: rebalancing would move the tail's deficit onto short videos
        profile = long_duration_profile(train)
    else:
        raise ValueError(f"unknown benchmark {name!r}; expected one of {BENCHMARKS}")
    outs = tuple(biased_oracle_first_stage(part, profile, seed=1000 * seed + i, signals=signals,
                                           structure_seed=seed)
                 for i, part in enumerate(parts))
    return outs, profile


def benchmark_bucketing(name: str, train: Impressions, K: int = 4) -> Bucketing:
    if name == "long_duration_bias":
        return fit_bucketing(train.duration_s, 4, mode="fixed", boundaries=_tail_cuts(train))
    return fit_bucketing(train.duration_s, K)


def build_benchmark(
    name: str = "pseudo_balance",
    n: int = 50_000,
    seed: int = 0,
    K: int = 4,
    generator: GeneratorConfig | None = None,
    signals: OracleSignalConfig | None = None,
) -> Benchmark:
    """Generate data, split 8:1:1 and fabricate the first stage (pseudo-balance scale fitted on train).

    ``K`` sets the equal-frequency bucketing of ``pseudo_balance``; the
    long-duration construction always uses its own four quantile groups.
    """
    if name not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {name!r}; expected one of {BENCHMARKS}")
    # skip-free: with y = 0 the correction label is 0 and the factor transform is undefined
    gen = generator or GeneratorConfig(skip_prob=0.0)
    data = generate_synthetic(n, seed, gen)
    train, val, test = split(data, SplitSpec(seed=seed))
    outs, profile = fabricate_first_stage(name, train, (train, val, test), seed, signals)
    bucketing = benchmark_bucketing(name, train, K)
    return Benchmark(name, seed, train, val, test, outs, profile, bucketing)


@dataclass
class VariantRun:
    variant: str
    K: int
    seed: int
    test_mae: float
    test_xauc: float
    base_mae: float
    base_xauc: float
    y_hat: np.ndarray
    b_hat: np.ndarray
    result: TrainResult

    @property
    def model(self) -> DadfModel:
        return self.result.model


def run_variant(
    bench: Benchmark,
    variant: str = "full",
    K: int | None = None,
    hyper: TrainHyper | None = None,
    weights: LossWeights | None = None,
    config: CorrectionConfig | None = None,
    xauc_pairs: int | None = 5_000_000,
) -> VariantRun:
    """Train one variant on the benchmark's train/val splits and score it on test."""
    bk = bench.bucketing if K is None or K == bench.bucketing.K else fit_bucketing(bench.train.duration_s, K)
    tr, va, te = bench.batches(bk)
    hyper = hyper or TrainHyper(seed=bench.seed)
    cfg = replace(config or CorrectionConfig(), K=bk.K)
    res = train_variant(variant, tr, bench.train.watch_time_s, va, bench.val.watch_time_s, bk, weights, hyper, cfg)
    b_hat, y_hat = res.model.predict_corrected(te)
    y = bench.test.watch_time_s
    y0 = bench.outputs[2].y_hat0
    return VariantRun(
        variant=variant, K=bk.K, seed=bench.seed,
        test_mae=mae(y, y_hat), test_xauc=xauc(y, y_hat, xauc_pairs, bench.seed),
        base_mae=mae(y, y0), base_xauc=xauc(y, y0, xauc_pairs, bench.seed),
        y_hat=y_hat, b_hat=b_hat, result=res,
    )
