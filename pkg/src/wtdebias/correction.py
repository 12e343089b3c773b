"""Second-stage correction network.

Given frozen first-stage signals the network predicts a transformed correction
``z_hat``; the group's inverse transform turns it into a multiplicative factor
``b_hat`` and the served prediction is ``y_hat0 * b_hat``.

Pieces:

* auxiliary branch -- ``h_c`` from the playtime logit and the common
  representation, per-task projections of auxiliary logits mixed by
  self-attention (``h_l``), tower representations mixed as tokens (``h_r``),
  and an MLP combining the three into ``h_a``;
* fusion MLP over ``[x, l0, group embedding, h_a]``;
* one expert MLP per duration group with hard routing.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor, no_grad
from .data import Bucketing, Impressions
from .first_stage import FirstStageOutputs
from .nn import MLP, Embedding, Module, SelfAttention
from .transform import TransformParams, boxcox_inverse_t, domain_safe_z

FORMAT_VERSION = 1


@dataclass
class CorrectionConfig:
    K: int = 4
    n_features: int = 8
    n_tasks: int = 5
    rep_dim: int = 16
    common_dim: int = 64
    group_embed_dim: int = 8
    proj_dims: tuple[int, ...] = (8, 8)
    attn_dim: int = 16
    hc_dims: tuple[int, ...] = (32, 16)
    ha_dims: tuple[int, ...] = (32, 16)
    fusion_dims: tuple[int, ...] = (128, 64)
    expert_dims: tuple[int, ...] = (64, 32)
    use_aux: bool = True
    use_group_embedding: bool = True
    b_min: float = 0.1
    b_max: float = 10.0
    eps: float = 1e-6
    zero_branch_tol: float = 1e-4
    lambda_init: float = 1.0
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "CorrectionConfig":
        d = dict(d)
        for k in ("proj_dims", "hc_dims", "ha_dims", "fusion_dims", "expert_dims"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class InputScaler:
    """Standardisation of the dense correction inputs, fitted on the training split."""

    x_mean: np.ndarray
    x_std: np.ndarray
    l0_mean: float
    l0_std: float
    play_mean: float
    play_std: float
    common_mean: np.ndarray
    common_std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, out: FirstStageOutputs) -> "InputScaler":
        return cls(
            x.mean(axis=0), x.std(axis=0) + 1e-8,
            float(out.l0.mean()), float(out.l0.std() + 1e-8),
            float(out.play_logit.mean()), float(out.play_logit.std() + 1e-8),
            out.common_rep.mean(axis=0), out.common_rep.std(axis=0) + 1e-8,
        )

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "InputScaler":
        return cls(**{k: (np.array(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass
class Batch:
    """Inference-time signals for a set of impressions (never the label)."""

    x: np.ndarray
    groups: np.ndarray
    out: FirstStageOutputs

    def __len__(self) -> int:
        return len(self.groups)

    def subset(self, idx) -> "Batch":
        return Batch(self.x[idx], self.groups[idx], self.out.subset(idx))


class MultiLabelBranch(Module):
    def __init__(self, cfg: CorrectionConfig, rng: np.random.Generator):
        self.h_c = MLP((1 + cfg.common_dim, *cfg.hc_dims), rng)
        self.projections = [MLP((1, *cfg.proj_dims), rng, activation="tanh", final_activation="tanh")
                            for _ in range(cfg.n_tasks)]
        self.logit_attention = SelfAttention(cfg.proj_dims[-1], cfg.attn_dim, rng)
        self.token_mixer = SelfAttention(cfg.rep_dim, cfg.attn_dim, rng)
        n_in = cfg.hc_dims[-1] + cfg.n_tasks * cfg.attn_dim + cfg.attn_dim
        self.h_a = MLP((n_in, *cfg.ha_dims), rng)
        self.n_tasks = cfg.n_tasks

    def __call__(self, play: Tensor, common: Tensor, aux_logits: np.ndarray, tower_reps: np.ndarray):
        if aux_logits.shape[1] != self.n_tasks or tower_reps.shape[1] != self.n_tasks:
            raise ag.ShapeError(
                f"multilabel: expected {self.n_tasks} tasks, got logits {aux_logits.shape} reps {tower_reps.shape}"
            )
        n = aux_logits.shape[0]
        h_c = self.h_c(ag.concat([play.reshape(n, 1), common], axis=1))
        projected = [phi(Tensor(aux_logits[:, m:m + 1])) for m, phi in enumerate(self.projections)]
        tokens = ag.stack(projected, axis=1)  # (n, M, proj)
        h_l = self.logit_attention(tokens).reshape(n, -1)
        h_r = ag.mean(self.token_mixer(Tensor(tower_reps)), axis=1)
        return self.h_a(ag.concat([h_c, h_l, h_r], axis=1))


class DadfModel(Module):
    def __init__(self, cfg: CorrectionConfig):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.transform = TransformParams.create(cfg.K, cfg.lambda_init, cfg.eps, cfg.zero_branch_tol)
        self.lambdas = self.transform.lambdas
        self.multilabel = MultiLabelBranch(cfg, rng)
        self.group_embedding = Embedding(cfg.K, cfg.group_embed_dim, rng)
        n_in = cfg.n_features + 1 + cfg.group_embed_dim + cfg.ha_dims[-1]
        self.fusion = MLP((n_in, *cfg.fusion_dims), rng, final_activation="relu")
        self.experts = [MLP((cfg.fusion_dims[-1], *cfg.expert_dims, 1), rng) for _ in range(cfg.K)]
        for e in self.experts:
            e.layers[-1].weight.data *= 0.1
        if not cfg.use_group_embedding:
            self.group_embedding.table.frozen = True
            self.group_embedding.table.data[:] = 0.0
        self.name_parameters()
        self.scaler: InputScaler | None = None
        self.bucketing: Bucketing | None = None

    @property
    def K(self) -> int:
        return self.cfg.K

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if not p.frozen]

    def model_groups(self, groups) -> np.ndarray:
        """Map duration groups onto this model's experts (all to 0 for a single-expert model)."""
        groups = np.asarray(groups, dtype=np.int64)
        if self.K == 1:
            return np.zeros_like(groups)
        if groups.size and (groups.min() < 0 or groups.max() >= self.K):
            raise IndexError(f"group index out of range for K={self.K}")
        return groups

    # -- pieces --------------------------------------------------------------------
    def multilabel_forward(self, out: FirstStageOutputs) -> Tensor:
        s = self.scaler
        n = len(out)
        if not self.cfg.use_aux:
            return Tensor(np.zeros((n, self.cfg.ha_dims[-1])))
        play = Tensor((out.play_logit - s.play_mean) / s.play_std)
        common = Tensor((out.common_rep - s.common_mean) / s.common_std)
        return self.multilabel(play, common, out.aux_logits, out.tower_reps)

    def fuse(self, x: np.ndarray, l0: np.ndarray, groups, h_a: Tensor) -> Tensor:
        s = self.scaler
        groups = self.model_groups(groups)
        n = len(groups)
        xs = Tensor((np.asarray(x) - s.x_mean) / s.x_std)
        l0s = Tensor(((np.asarray(l0) - s.l0_mean) / s.l0_std).reshape(n, 1))
        return self.fusion(ag.concat([xs, l0s, self.group_embedding(groups), h_a], axis=1))

    def route_and_predict(self, h: Tensor, groups) -> Tensor:
        groups = self.model_groups(groups)
        parts, index = [], []
        for g in np.unique(groups):
            idx = np.flatnonzero(groups == g)
            parts.append(self.experts[g](ag.take_rows(h, idx)))
            index.append(idx)
        return ag.scatter_rows(parts, index, len(groups)).reshape(-1)

    def predict_z(self, batch: Batch) -> Tensor:
        h_a = self.multilabel_forward(batch.out)
        h = self.fuse(batch.x, batch.out.l0, batch.groups, h_a)
        return self.route_and_predict(h, batch.groups)

    def lambdas_for(self, groups) -> Tensor:
        return self.transform.group_lambdas(self.model_groups(groups))

    # -- serving -------------------------------------------------------------------
    def predict_corrected(self, batch: Batch, chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(b_hat, y_hat)``; uses only inference-time signals."""
        b_hat = np.empty(len(batch))
        with no_grad():
            for start in range(0, len(batch), chunk):
                sl = np.arange(start, min(start + chunk, len(batch)))
                sub = batch.subset(sl)
                z_hat = self.predict_z(sub).data
                lam = self.lambdas.data[self.model_groups(sub.groups)]
                z_safe = domain_safe_z(z_hat, lam)
                b, _ = boxcox_inverse_t(Tensor(z_safe), Tensor(lam), self.cfg.eps, self.cfg.zero_branch_tol)
                b_hat[sl] = np.clip(b.data, self.cfg.b_min, self.cfg.b_max)
        return b_hat, batch.out.y_hat0 * b_hat

    # -- persistence ---------------------------------------------------------------
    def save(self, path) -> None:
        doc = {
            "format": "wtdebias.correction",
            "version": FORMAT_VERSION,
            "config": asdict(self.cfg),
            "lambdas": self.lambdas.data.tolist(),
            "eps": self.cfg.eps,
            "clamp": [self.cfg.b_min, self.cfg.b_max],
            "bucketing": self.bucketing.to_dict() if self.bucketing is not None else None,
            "scaler": self.scaler.to_dict() if self.scaler is not None else None,
            "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in self.state().items()},
        }
        Path(path).write_text(json.dumps(doc, indent=None, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DadfModel":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != "wtdebias.correction" or doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: not a version-{FORMAT_VERSION} correction model file")
        model = cls(CorrectionConfig.from_dict(doc["config"]))
        model.load_state({k: np.array(v["data"]).reshape(v["shape"]) for k, v in doc["params"].items()})
        if doc["bucketing"] is not None:
            model.bucketing = Bucketing.from_dict(doc["bucketing"])
        if doc["scaler"] is not None:
            model.scaler = InputScaler.from_dict(doc["scaler"])
        return model


def make_batch(data: Impressions, out: FirstStageOutputs, bucketing: Bucketing) -> Batch:
    if len(data) != len(out):
        raise ValueError(f"{len(data)} impressions but {len(out)} first-stage rows")
    return Batch(data.features, bucketing(data.duration_s), out)


def predict_corrected(out: FirstStageOutputs, x: np.ndarray, d: np.ndarray, model: DadfModel,
                      bucketing: Bucketing | None = None) -> tuple[np.ndarray, np.ndarray]:
    bucketing = bucketing or model.bucketing
    return model.predict_corrected(Batch(np.asarray(x, dtype=np.float64), bucketing(d), out))
