import logging

import numpy as np
import pytest

from wtdebias import autograd as ag
from wtdebias.benchmarks import build_benchmark, fabricate_first_stage
from wtdebias.correction import CorrectionConfig
from wtdebias.data import fit_bucketing
from wtdebias.first_stage import BiasProfile, biased_oracle_first_stage
from wtdebias.correction import make_batch
from wtdebias.training import (
    LossWeights, TrainHyper, TrainingDivergedError, loss_abs, loss_reg, loss_trans, make_label, objective,
    train_dadf, train_variant, variant_settings,
)
from wtdebias.transform import GroupMoments, batch_moments

FAST = TrainHyper(epochs=3, batch_size=512, seed=0, xauc_pairs=20_000)


def test_make_label_examples():
    assert make_label(10.0, 5.0) == pytest.approx(2.0, rel=1e-6)
    assert make_label(0.0, 5.0) == 0.0
    assert make_label(1.0, 0.0) == pytest.approx(1e6)
    with pytest.raises(ValueError):
        make_label(-1.0, 2.0)


def test_loss_examples():
    assert loss_trans([0.0, 2.0], [0.0, 2.0]).item() == 0.0
    assert loss_trans([0.0, 2.0], [1.0, 1.0]).item() == pytest.approx(1.0)
    assert loss_abs([0.0], [0.0]).item() == 0.0
    assert loss_abs([0.0], [0.5]).item() == pytest.approx(0.125)
    assert loss_abs([0.0], [3.0]).item() == pytest.approx(2.5)


def _moments(mu, var, skew):
    t = ag.Tensor
    return GroupMoments(0, 10, t(mu), t(var), t(skew), True)


def test_loss_reg_examples():
    w = LossWeights()
    assert loss_reg([_moments(0.0, 1.0, 0.0)], w).item() == 0.0
    assert loss_reg([_moments(1.0, 1.0, 0.0)], w).item() == pytest.approx(1.0)
    assert loss_reg([_moments(0.0, 3.0, -2.0)], w).item() == pytest.approx(4.0 + 0.5 * 2.0)


def test_loss_reg_all_masked(caplog):
    masked = [GroupMoments(g, 2, None, None, None, False) for g in range(3)]
    with caplog.at_level(logging.WARNING):
        assert loss_reg(masked, LossWeights()).item() == 0.0
    assert "masked" in caplog.text


def test_loss_weights_non_negative():
    with pytest.raises(ValueError):
        LossWeights(eta=-0.1)


def test_objective_is_weighted_sum(tiny_bench, tiny_model):
    tr = tiny_bench.batches()[0]
    idx = np.arange(64)
    w = LossWeights(alpha=0.7, beta=0.3, eta=0.2)
    terms = objective(tiny_model, tr.subset(idx), tiny_bench.train.watch_time_s[idx], w)
    expected = 0.7 * terms.l_trans.item() + 0.3 * terms.l_abs.item() + 0.2 * terms.l_reg.item()
    assert terms.total.item() == pytest.approx(expected, rel=1e-12)
    assert terms.l_reg.item() > 0
    assert objective(tiny_model, tr.subset(idx), tiny_bench.train.watch_time_s[idx], w, use_reg=False).l_reg.item() == 0.0


def test_divergence_names_term(tiny_bench):
    tr, va, _ = tiny_bench.batches()
    y = tiny_bench.train.watch_time_s.copy()
    y[5] = np.nan
    with pytest.raises(TrainingDivergedError, match="l_trans"):
        train_dadf(tr, y, va, tiny_bench.val.watch_time_s, tiny_bench.bucketing, hyper=FAST)


def test_unknown_variant():
    with pytest.raises(ValueError, match="unknown variant"):
        variant_settings("bogus", CorrectionConfig())


def test_variant_settings():
    cfg = CorrectionConfig(K=4)
    assert variant_settings("no_dist", cfg)[1:] == (False, False)
    assert variant_settings("no_factor", cfg)[0].K == 1
    assert not variant_settings("no_aux", cfg)[0].use_aux
    g, use_reg, train_lam = variant_settings("global_correction", cfg)
    assert (g.K, g.lambda_init, g.use_aux, g.use_group_embedding, use_reg, train_lam) == (1, 0.0, False, False, False, False)


def test_no_factor_equals_single_group_full(tiny_bench):
    tr, va, _ = tiny_bench.batches()
    args = (tiny_bench.train.watch_time_s, va, tiny_bench.val.watch_time_s)
    a = train_variant("no_factor", tr, args[0], args[1], args[2], tiny_bench.bucketing, hyper=FAST)
    one = fit_bucketing(tiny_bench.train.duration_s, 1)
    tr1, va1, _ = tiny_bench.batches(one)
    b = train_variant("full", tr1, args[0], va1, args[2], one, hyper=FAST)
    sa, sb = a.model.state(), b.model.state()
    assert sa.keys() == sb.keys()
    for k in sa:
        np.testing.assert_array_equal(sa[k], sb[k])


def test_training_is_deterministic(tiny_bench):
    tr, va, _ = tiny_bench.batches()
    run = lambda: train_variant("full", tr, tiny_bench.train.watch_time_s, va, tiny_bench.val.watch_time_s,
                                tiny_bench.bucketing, hyper=FAST)
    a, b = run(), run()
    assert a.history == b.history
    for k, v in a.model.state().items():
        np.testing.assert_array_equal(v, b.model.state()[k])


def test_frozen_lambdas_stay_put(tiny_bench):
    tr, va, _ = tiny_bench.batches()
    res = train_variant("no_dist", tr, tiny_bench.train.watch_time_s, va, tiny_bench.val.watch_time_s,
                        tiny_bench.bucketing, hyper=FAST)
    assert np.all(res.model.lambdas.data == 1.0)
    assert all(r["l_reg"] == 0.0 for r in res.history)


def test_identity_oracle_learns_unit_factor(tiny_bench):
    parts = (tiny_bench.train, tiny_bench.val)
    outs = [biased_oracle_first_stage(p, BiasProfile.identity(), seed=i) for i, p in enumerate(parts)]
    bk = tiny_bench.bucketing
    tr, va = (make_batch(p, o, bk) for p, o in zip(parts, outs))
    res = train_dadf(tr, parts[0].watch_time_s, va, parts[1].watch_time_s, bk,
                     hyper=TrainHyper(epochs=10, batch_size=256, xauc_pairs=20_000))
    b_hat, _ = res.model.predict_corrected(va)
    assert np.mean(np.abs(b_hat - 1.0) <= 0.05) >= 0.99


@pytest.mark.xfail(reason="Var(z) starts at the raw factor variance (lambda=1) and overshoots the band "
                          "early on; see the decisions ledger", strict=False)
def test_group_variance_stays_in_band():
    bench = build_benchmark("pseudo_balance", n=20_000, seed=0)
    tr, va, _ = bench.batches()
    res = train_variant("full", tr, bench.train.watch_time_s, va, bench.val.watch_time_s, bench.bucketing,
                        hyper=TrainHyper(epochs=10, seed=0, xauc_pairs=50_000))
    for rec in res.history:
        for v in rec["group_var_z"]:
            assert v is None or 0.5 <= v <= 2.0
