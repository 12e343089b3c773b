"""Correction labels, the three loss terms and the second-stage training loop."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .correction import Batch, CorrectionConfig, DadfModel, InputScaler
from .data import Bucketing
from .metrics import mae, xauc
from .optim import Adam
from .transform import GroupMoments, batch_moments, boxcox_inverse_t, boxcox_t

log = logging.getLogger(__name__)

VARIANTS = ("full", "no_dist", "no_factor", "no_aux", "global_correction")


class TrainingDivergedError(RuntimeError):
    pass


def make_label(y, y_hat0, eps: float = 1e-6) -> np.ndarray:
    """Multiplicative correction label ``y / (y_hat0 + eps)``; ``y_hat0`` is a constant."""
    y = np.asarray(y, dtype=np.float64)
    y_hat0 = np.asarray(y_hat0, dtype=np.float64)
    if np.any(y < 0) or np.any(y_hat0 < 0):
        raise ValueError("watch time and base prediction must be non-negative")
    return y / (y_hat0 + eps)


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.8
    eta: float = 0.10
    huber_delta: float = 1.0
    w_mu: float = 1.0
    w_sigma: float = 1.0
    w_s: float = 0.5
    min_group: int = 8

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be >= 0")


@dataclass
class LossBreakdown:
    l_trans: float
    l_abs: float
    l_reg: float
    total: float
    masked: list[bool] = field(default_factory=list)  # True where a group was left out of L_reg


def loss_trans(z, z_hat) -> Tensor:
    r = ag.as_tensor(z_hat) - ag.as_tensor(z)
    return ag.mean(r * r)


def loss_abs(y, y_hat, delta: float = 1.0) -> Tensor:
    return ag.mean(ag.huber(ag.as_tensor(y_hat) - ag.as_tensor(y), delta))


def loss_reg(moments: list[GroupMoments], weights: LossWeights) -> Tensor:
    """Mean over usable groups of ``w_mu*mu^2 + w_sigma*(var-1)^2 + w_s*|skew|``."""
    used = [m for m in moments if m.mask]
    if not used:
        log.warning("all duration groups masked in L_reg; term set to 0")
        return Tensor(0.0)
    total = Tensor(0.0)
    for m in used:
        dv = m.var - 1.0
        total = total + weights.w_mu * m.mean * m.mean + weights.w_sigma * dv * dv + weights.w_s * ag.abs_(m.skew)
    return total * (1.0 / len(used))


@dataclass
class ObjectiveTerms:
    total: Tensor
    l_trans: Tensor
    l_abs: Tensor
    l_reg: Tensor
    moments: list[GroupMoments]
    domain_violations: int

    def breakdown(self) -> LossBreakdown:
        return LossBreakdown(self.l_trans.item(), self.l_abs.item(), self.l_reg.item(), self.total.item(),
                             [not m.mask for m in self.moments])


def objective(model: DadfModel, batch: Batch, y: np.ndarray, weights: LossWeights, use_reg: bool = True) -> ObjectiveTerms:
    """``alpha*L_trans + beta*L_abs + eta*L_reg`` on one batch."""
    out = batch.out
    b = make_label(y, out.y_hat0, model.cfg.eps)
    lam = model.lambdas_for(batch.groups)
    z = boxcox_t(b, lam, model.cfg.eps, model.cfg.zero_branch_tol)
    z_hat = model.predict_z(batch)
    l_trans = loss_trans(z, z_hat)
    b_hat, bad = boxcox_inverse_t(z_hat, lam, model.cfg.eps, model.cfg.zero_branch_tol)
    l_abs = loss_abs(y, b_hat * out.y_hat0, weights.huber_delta)
    moments = batch_moments(z, model.model_groups(batch.groups), model.K, weights.min_group)
    l_reg = loss_reg(moments, weights) if use_reg else Tensor(0.0)
    total = weights.alpha * l_trans + weights.beta * l_abs + weights.eta * l_reg
    return ObjectiveTerms(total, l_trans, l_abs, l_reg, moments, int(bad.sum()))


@dataclass
class TrainHyper:
    epochs: int = 30
    batch_size: int = 1024
    lr: float = 1e-3
    lambda_lr: float | None = None  # defaults to lr
    lr_decay: float = 1.0  # multiplicative per-epoch decay of every learning rate
    patience: int = 5
    seed: int = 0
    xauc_pairs: int = 200_000
    log_path: str | None = None


@dataclass
class TrainResult:
    model: DadfModel
    history: list[dict]
    best_epoch: int
    best_val_mae: float


def _validate(model: DadfModel, batch: Batch, y: np.ndarray, hyper: TrainHyper) -> tuple[float, float]:
    _, y_hat = model.predict_corrected(batch)
    return mae(y, y_hat), xauc(y, y_hat, max_pairs=hyper.xauc_pairs, seed=hyper.seed)


def train_dadf(
    train: Batch,
    y_train: np.ndarray,
    val: Batch,
    y_val: np.ndarray,
    bucketing: Bucketing,
    weights: LossWeights | None = None,
    hyper: TrainHyper | None = None,
    config: CorrectionConfig | None = None,
    use_reg: bool = True,
    train_lambda: bool = True,
) -> TrainResult:
    """Mini-batch Adam on the combined objective with early stopping on validation MAE."""
    weights = weights or LossWeights()
    hyper = hyper or TrainHyper()
    cfg = config or CorrectionConfig()
    out = train.out
    cfg = replace(cfg, n_features=train.x.shape[1], n_tasks=out.n_tasks, rep_dim=out.rep_dim,
                  common_dim=out.common_dim, seed=hyper.seed)
    if cfg.K != 1 and cfg.K != bucketing.K:
        raise ValueError(f"model K={cfg.K} does not match bucketing K={bucketing.K}")
    model = DadfModel(cfg)
    model.scaler = InputScaler.fit(train.x, out)
    model.bucketing = bucketing
    if not train_lambda:
        model.lambdas.frozen = True
    if not cfg.use_aux:
        model.multilabel.freeze()

    params = model.trainable_parameters()
    overrides = {"lambdas": hyper.lambda_lr} if hyper.lambda_lr is not None else {}
    opt = Adam(params, lr=hyper.lr, lr_overrides=overrides)
    rng = np.random.default_rng(hyper.seed)
    y_train = np.asarray(y_train, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)

    log_fh = open(hyper.log_path, "a", encoding="utf-8") if hyper.log_path else None
    history: list[dict] = []
    best = (np.inf, -1, model.state())
    stale = 0
    try:
        for epoch in range(hyper.epochs):
            perm = rng.permutation(len(train))
            sums = np.zeros(4)
            var_z = [[] for _ in range(model.K)]
            violations = 0
            n_batches = 0
            for bi, start in enumerate(range(0, len(train), hyper.batch_size)):
                idx = perm[start:start + hyper.batch_size]
                opt.zero_grad()
                terms = objective(model, train.subset(idx), y_train[idx], weights, use_reg)
                values = [terms.l_trans.item(), terms.l_abs.item(), terms.l_reg.item(), terms.total.item()]
                if not np.all(np.isfinite(values)):
                    bad = [n for n, v in zip(("l_trans", "l_abs", "l_reg", "total"), values) if not np.isfinite(v)]
                    raise TrainingDivergedError(f"non-finite loss at epoch {epoch} batch {bi}: {bad}")
                terms.total.backward()
                opt.step()
                if train_lambda:
                    model.transform.clamp_()
                sums += values
                n_batches += 1
                violations += terms.domain_violations
                for m in terms.moments:
                    if m.mask:
                        var_z[m.group].append(m.var.item())
            opt.lr *= hyper.lr_decay
            opt.lr_overrides = {k: v * hyper.lr_decay for k, v in opt.lr_overrides.items()}
            val_mae, val_xauc = _validate(model, val, y_val, hyper)
            record = {
                "epoch": epoch,
                "l_trans": sums[0] / n_batches,
                "l_abs": sums[1] / n_batches,
                "l_reg": sums[2] / n_batches,
                "total": sums[3] / n_batches,
                "val_mae": val_mae,
                "val_xauc": val_xauc,
                "lambdas": model.lambdas.data.tolist(),
                "group_var_z": [float(np.mean(v)) if v else None for v in var_z],
                "domain_violations": violations,
            }
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
            log.info("epoch %d total %.4f val MAE %.4f XAUC %.4f", epoch, record["total"], val_mae, val_xauc)
            if val_mae < best[0] - 1e-12:
                best = (val_mae, epoch, model.state())
                stale = 0
            else:
                stale += 1
                if stale >= hyper.patience:
                    break
    finally:
        if log_fh:
            log_fh.close()
    model.load_state(best[2])
    return TrainResult(model, history, best[1], best[0])


def variant_settings(variant: str, config: CorrectionConfig) -> tuple[CorrectionConfig, bool, bool]:
    """(config, use_reg, train_lambda) for an ablation or baseline variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant == "full":
        return config, True, True
    if variant == "no_dist":
        return replace(config, lambda_init=1.0), False, False
    if variant == "no_factor":
        return replace(config, K=1), True, True
    if variant == "no_aux":
        return replace(config, use_aux=False), True, True
    # simplified TranSUN-style global correction: fixed log transform, one expert, no aux, no L_reg
    return replace(config, K=1, lambda_init=0.0, use_aux=False, use_group_embedding=False), False, False


def train_variant(
    variant: str,
    train: Batch,
    y_train,
    val: Batch,
    y_val,
    bucketing: Bucketing,
    weights: LossWeights | None = None,
    hyper: TrainHyper | None = None,
    config: CorrectionConfig | None = None,
) -> TrainResult:
    config = config or CorrectionConfig(K=bucketing.K)
    config = replace(config, K=bucketing.K)
    cfg, use_reg, train_lambda = variant_settings(variant, config)
    return train_dadf(train, y_train, val, y_val, bucketing, weights, hyper, cfg, use_reg, train_lambda)
