"""First-stage watch-time predictors whose outputs the correction model consumes.

Two trainable backbones share one shared-bottom multi-task network:

* ``vr``  -- value regression, ``y_hat0 = softplus(l0)`` fitted with MSE;
* ``wlr`` -- weighted logistic regression, positives weighted by watch time,
  ``y_hat0 = clip(exp(l0), 0, d)`` (the odds read as expected watch time).

Both also train five auxiliary engagement heads and a separate playtime head.
:func:`biased_oracle_first_stage` fabricates outputs with a known bias profile
for controlled experiments.  Any other producer of :class:`FirstStageOutputs`
plugs into the correction model the same way.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor, no_grad
from .data import AUX_TASKS, DataError, Impressions
from .nn import MLP, Embedding, Linear, Module
from .optim import Adam

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class FirstStageOutput:
    y_hat0: float
    l0: float
    aux_logits: np.ndarray
    play_logit: float
    tower_reps: np.ndarray
    common_rep: np.ndarray


@dataclass
class FirstStageOutputs:
    """Columnar frozen first-stage signals, one row per impression."""

    y_hat0: np.ndarray  # (n,)
    l0: np.ndarray  # (n,) raw watch-time output before the output mapping
    aux_logits: np.ndarray  # (n, M)
    play_logit: np.ndarray  # (n,)
    tower_reps: np.ndarray  # (n, M, R)
    common_rep: np.ndarray  # (n, C)

    def __post_init__(self):
        n = len(self.y_hat0)
        for f in fields(self):
            arr = np.asarray(getattr(self, f.name), dtype=np.float64)
            if len(arr) != n:
                raise DataError(f"{f.name} has {len(arr)} rows, expected {n}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite values in first-stage {f.name}")
            setattr(self, f.name, arr)
        if np.any(self.y_hat0 < 0):
            raise DataError("first-stage predictions must be non-negative")

    def __len__(self) -> int:
        return len(self.y_hat0)

    def __getitem__(self, i: int) -> FirstStageOutput:
        return FirstStageOutput(
            float(self.y_hat0[i]), float(self.l0[i]), self.aux_logits[i].copy(),
            float(self.play_logit[i]), self.tower_reps[i].copy(), self.common_rep[i].copy(),
        )

    def subset(self, idx) -> "FirstStageOutputs":
        return FirstStageOutputs(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    @property
    def n_tasks(self) -> int:
        return self.aux_logits.shape[1]

    @property
    def rep_dim(self) -> int:
        return self.tower_reps.shape[2]

    @property
    def common_dim(self) -> int:
        return self.common_rep.shape[1]

    def to_csv(self, path) -> None:
        """Flattened rows: y_hat0, l0, play, aux_*, rep_m_k, xc_k."""
        M, R, C = self.n_tasks, self.rep_dim, self.common_dim
        header = ["y_hat0", "l0", "play_logit", *[f"aux_{m}" for m in range(M)],
                  *[f"rep_{m}_{k}" for m in range(M) for k in range(R)], *[f"xc_{k}" for k in range(C)]]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            flat = np.column_stack([self.y_hat0, self.l0, self.play_logit, self.aux_logits,
                                    self.tower_reps.reshape(len(self), -1), self.common_rep])
            for row in flat:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "FirstStageOutputs":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.array([[float(v) for v in r] for r in reader], dtype=np.float64).reshape(-1, len(header))
        col = {name: i for i, name in enumerate(header)}
        M = sum(h.startswith("aux_") for h in header)
        reps = [h for h in header if h.startswith("rep_")]
        R = len(reps) // M if M else 0
        n = len(rows)
        return cls(
            y_hat0=rows[:, col["y_hat0"]],
            l0=rows[:, col["l0"]],
            play_logit=rows[:, col["play_logit"]],
            aux_logits=rows[:, [col[f"aux_{m}"] for m in range(M)]],
            tower_reps=rows[:, [col[h] for h in reps]].reshape(n, M, R),
            common_rep=rows[:, [i for h, i in col.items() if h.startswith("xc_")]],
        )


def softplus_inverse(y) -> np.ndarray:
    y = np.maximum(np.asarray(y, dtype=np.float64), 1e-6)
    # log(expm1(y)) written to stay finite for large y
    return y + np.log(-np.expm1(-y))


# -- trainable backbones ------------------------------------------------------------
@dataclass
class FirstStageHyper:
    embedding_dim: int = 16
    hidden: tuple[int, ...] = (256, 128, 64)
    tower_dim: int = 16
    epochs: int = 20
    batch_size: int = 1024
    lr: float = 1e-3
    patience: int = 3
    seed: int = 0
    positive_threshold: float = 0.0  # WLR: y > threshold is a positive


class FirstStageModel(Module):
    """Shared-bottom trunk with a watch-time head, a playtime head and M auxiliary towers."""

    def __init__(self, backbone: str, n_users: int, n_items: int, n_features: int, hyper: FirstStageHyper,
                 n_tasks: int = len(AUX_TASKS)):
        if backbone not in ("vr", "wlr"):
            raise ValueError(f"unknown backbone {backbone!r}")
        rng = np.random.default_rng(hyper.seed)
        self.backbone = backbone
        self.hyper = hyper
        self.user_emb = Embedding(n_users + 1, hyper.embedding_dim, rng)
        self.item_emb = Embedding(n_items + 1, hyper.embedding_dim, rng)
        n_in = 2 * hyper.embedding_dim + n_features + 1
        self.trunk = MLP((n_in, *hyper.hidden), rng, final_activation="relu")
        width = hyper.hidden[-1]
        self.watch_head = Linear(width, 1, rng)
        self.play_head = Linear(width, 1, rng)
        self.towers = [Linear(width, hyper.tower_dim, rng) for _ in range(n_tasks)]
        self.task_heads = [Linear(hyper.tower_dim, 1, rng) for _ in range(n_tasks)]
        self.name_parameters("first_stage.")
        # preprocessing state, fitted on the training split
        self.user_vocab = np.zeros(0, dtype=np.int64)
        self.item_vocab = np.zeros(0, dtype=np.int64)
        self.feature_mean = np.zeros(n_features + 1)
        self.feature_std = np.ones(n_features + 1)
        self.head_scale = 1.0  # VR: watch-time spread, so the head starts in label units
        self.frozen = False

    # ids unseen in training map to row 0
    def _index(self, vocab: np.ndarray, ids: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(vocab, ids)
        pos = np.minimum(pos, max(len(vocab) - 1, 0))
        hit = (len(vocab) > 0) & (vocab[pos] == ids) if len(vocab) else np.zeros(len(ids), bool)
        return np.where(hit, pos + 1, 0)

    def fit_preprocessing(self, data: Impressions) -> None:
        self.user_vocab = np.unique(data.user_id)
        self.item_vocab = np.unique(data.item_id)
        dense = self._dense(data)
        self.feature_mean = dense.mean(axis=0)
        self.feature_std = dense.std(axis=0) + 1e-8
        if self.backbone == "vr":
            self.head_scale = float(data.watch_time_s.std()) or 1.0

    def _dense(self, data: Impressions) -> np.ndarray:
        return np.column_stack([data.features, np.log(data.duration_s)])

    def forward(self, data: Impressions):
        dense = (self._dense(data) - self.feature_mean) / self.feature_std
        u = self.user_emb(self._index(self.user_vocab, data.user_id))
        i = self.item_emb(self._index(self.item_vocab, data.item_id))
        x_c = self.trunk(ag.concat([u, i, Tensor(dense)], axis=1))
        l0 = self.watch_head(x_c).reshape(-1)
        if self.head_scale != 1.0:
            l0 = l0 * self.head_scale
        play = self.play_head(x_c).reshape(-1)
        reps = [ag.relu(t(x_c)) for t in self.towers]
        logits = [h(r).reshape(-1) for h, r in zip(self.task_heads, reps)]
        return x_c, l0, play, reps, logits

    def output_mapping(self, l0: np.ndarray, duration: np.ndarray) -> np.ndarray:
        if self.backbone == "vr":
            return np.logaddexp(0.0, l0)
        return np.clip(np.exp(np.minimum(l0, 50.0)), 0.0, duration)

    def emit(self, data: Impressions, batch_size: int = 8192) -> FirstStageOutputs:
        parts = []
        with no_grad():
            for start in range(0, len(data), batch_size):
                chunk = data.subset(np.arange(start, min(start + batch_size, len(data))))
                x_c, l0, play, reps, logits = self.forward(chunk)
                parts.append(FirstStageOutputs(
                    y_hat0=self.output_mapping(l0.data, chunk.duration_s),
                    l0=l0.data,
                    aux_logits=np.column_stack([t.data for t in logits]),
                    play_logit=play.data,
                    tower_reps=np.stack([r.data for r in reps], axis=1),
                    common_rep=x_c.data,
                ))
        if not parts:
            M, R, C = len(self.towers), self.hyper.tower_dim, self.hyper.hidden[-1]
            return FirstStageOutputs(np.zeros(0), np.zeros(0), np.zeros((0, M)), np.zeros(0),
                                     np.zeros((0, M, R)), np.zeros((0, C)))
        return FirstStageOutputs(**{f.name: np.concatenate([getattr(p, f.name) for p in parts])
                                    for f in fields(FirstStageOutputs)})

    # -- persistence --------------------------------------------------------------
    def save(self, path) -> None:
        doc = {
            "format": "wtdebias.first_stage",
            "version": FORMAT_VERSION,
            "backbone": self.backbone,
            "hyper": asdict(self.hyper),
            "n_features": len(self.feature_mean) - 1,
            "n_users": self.user_emb.n - 1,
            "n_items": self.item_emb.n - 1,
            "n_tasks": len(self.towers),
            "user_vocab": self.user_vocab.tolist(),
            "item_vocab": self.item_vocab.tolist(),
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "head_scale": self.head_scale,
            "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in self.state().items()},
        }
        Path(path).write_text(json.dumps(doc), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FirstStageModel":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != "wtdebias.first_stage" or doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: not a version-{FORMAT_VERSION} first-stage model file")
        hyper = doc["hyper"]
        hyper["hidden"] = tuple(hyper["hidden"])
        model = cls(doc["backbone"], doc["n_users"], doc["n_items"], doc["n_features"],
                    FirstStageHyper(**hyper), doc["n_tasks"])
        model.user_vocab = np.array(doc["user_vocab"], dtype=np.int64)
        model.item_vocab = np.array(doc["item_vocab"], dtype=np.int64)
        model.feature_mean = np.array(doc["feature_mean"])
        model.feature_std = np.array(doc["feature_std"])
        model.head_scale = float(doc["head_scale"])
        model.load_state({k: np.array(v["data"]).reshape(v["shape"]) for k, v in doc["params"].items()})
        model.freeze()
        model.frozen = True
        return model


def _loss(model: FirstStageModel, batch: Impressions, y_scale: float) -> Tensor:
    x_c, l0, play, reps, logits = model.forward(batch)
    y = batch.watch_time_s
    if model.backbone == "vr":
        resid = ag.softplus(l0) - y
        main = ag.mean(resid * resid) * (1.0 / y_scale)
    else:
        pos = y > model.hyper.positive_threshold
        main = ag.binary_cross_entropy_with_logits(l0, pos, np.where(pos, y, 1.0))
    play_resid = play - np.log1p(y)
    loss = main + ag.mean(play_resid * play_resid)
    for m, logit in enumerate(logits):
        loss = loss + ag.binary_cross_entropy_with_logits(logit, batch.aux_labels[:, m])
    return loss


def _train(backbone: str, train: Impressions, val: Impressions, hyper: FirstStageHyper) -> FirstStageModel:
    if len(train) == 0:
        raise DataError("empty training split")
    n_users = len(np.unique(train.user_id))
    n_items = len(np.unique(train.item_id))
    model = FirstStageModel(backbone, n_users, n_items, train.n_features, hyper, train.aux_labels.shape[1])
    model.fit_preprocessing(train)
    if backbone == "vr":
        model.watch_head.bias.data[:] = softplus_inverse(train.watch_time_s.mean()) / model.head_scale
    else:
        pos = train.watch_time_s > hyper.positive_threshold
        odds = train.watch_time_s[pos].sum() / max((~pos).sum(), 1)
        model.watch_head.bias.data[:] = np.log(odds)
    y_scale = float(train.watch_time_s.var()) + 1e-8
    params = model.parameters()
    opt = Adam(params, lr=hyper.lr)
    rng = np.random.default_rng(hyper.seed + 1)
    best_mae, best_state, stale, last_ok = np.inf, model.state(), 0, -1
    for epoch in range(hyper.epochs):
        perm = rng.permutation(len(train))
        for start in range(0, len(train), hyper.batch_size):
            batch = train.subset(perm[start:start + hyper.batch_size])
            opt.zero_grad()
            loss = _loss(model, batch, y_scale)
            if not np.isfinite(loss.item()):
                raise TrainingDivergedError(f"{backbone} first stage diverged in epoch {epoch}; "
                                            f"last finite epoch {last_ok}")
            loss.backward()
            opt.step()
        last_ok = epoch
        if len(val):
            mae = float(np.mean(np.abs(model.emit(val).y_hat0 - val.watch_time_s)))
            log.info("%s epoch %d val MAE %.4f", backbone, epoch, mae)
            if mae < best_mae - 1e-9:
                best_mae, best_state, stale = mae, model.state(), 0
            else:
                stale += 1
                if stale >= hyper.patience:
                    break
        else:
            best_state = model.state()
    model.load_state(best_state)
    return model


def train_vr(train: Impressions, val: Impressions, hyper: FirstStageHyper | None = None) -> FirstStageModel:
    return _train("vr", train, val, hyper or FirstStageHyper())


def train_wlr(train: Impressions, val: Impressions, hyper: FirstStageHyper | None = None) -> FirstStageModel:
    hyper = hyper or FirstStageHyper()
    pos = train.watch_time_s > hyper.positive_threshold
    if pos.all() or not pos.any():
        raise DataError("WLR needs both positive and negative impressions "
                        f"(threshold {hyper.positive_threshold}); got {int(pos.sum())}/{len(pos)} positive")
    return _train("wlr", train, val, hyper)


def freeze_and_emit(model: FirstStageModel, data: Impressions) -> FirstStageOutputs:
    model.freeze()
    model.frozen = True
    return model.emit(data)


# -- controlled biased first stage ------------------------------------------------
@dataclass
class BiasProfile:
    """Multiplicative bias of a fabricated first stage.

    ``factor(y, d) = scale * dur_factor[dur bucket] * exp(strength[dur bucket] * log(factor[watch bucket]))``
    with watch-time buckets cut at ``watch_edges`` (seconds, right-open) and
    duration buckets at ``duration_edges``.
    """

    watch_edges: tuple[float, ...] = (3.0, 10.0, 30.0, 60.0)
    watch_factors: tuple[float, ...] = (1.6, 1.3, 1.0, 0.8, 0.55)
    duration_edges: tuple[float, ...] = ()
    duration_strength: tuple[float, ...] = (1.0,)
    duration_factors: tuple[float, ...] | None = None  # None: 1 in every duration bucket
    noise_sigma: float = 0.0
    outlier_prob: float = 0.0  # chance that y_hat0 is additionally under-predicted
    outlier_scale: float = 10.0  # under-prediction divisor drawn log-uniformly from [1, outlier_scale]
    scale: float = 1.0

    def __post_init__(self):
        if len(self.watch_factors) != len(self.watch_edges) + 1:
            raise ValueError("need one watch factor per watch-time bucket")
        if len(self.duration_strength) != len(self.duration_edges) + 1:
            raise ValueError("need one strength per duration bucket")
        if self.duration_factors is not None and len(self.duration_factors) != len(self.duration_edges) + 1:
            raise ValueError("need one duration factor per duration bucket")
        if min(self.watch_factors) <= 0 or self.scale <= 0 or min(self.duration_factors or (1.0,)) <= 0:
            raise ValueError("bias factors must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0.0 <= self.outlier_prob < 1.0 or self.outlier_scale < 1.0:
            raise ValueError("need 0 <= outlier_prob < 1 and outlier_scale >= 1")

    @classmethod
    def identity(cls) -> "BiasProfile":
        return cls(watch_edges=(), watch_factors=(1.0,))

    def factor(self, y, d) -> np.ndarray:
        wf = np.asarray(self.watch_factors)[np.searchsorted(self.watch_edges, y, side="right")]
        db = np.searchsorted(self.duration_edges, d, side="right")
        strength = np.asarray(self.duration_strength)[db]
        df = np.asarray(self.duration_factors)[db] if self.duration_factors is not None else 1.0
        return self.scale * df * np.exp(strength * np.log(wf))

    def balanced(self, data: Impressions) -> "BiasProfile":
        """Rescale so that sum(factor * y) == sum(y): aggregate ratio 1, buckets still biased."""
        y, d = data.watch_time_s, data.duration_s
        unit = BiasProfile(**{**asdict(self), "scale": 1.0})
        # mean of the outlier divisor 1/U, U log-uniform on [1, s]: (1 - 1/s) / log(s)
        shrink = 1.0
        if self.outlier_prob > 0 and self.outlier_scale > 1:
            s = self.outlier_scale
            shrink = 1.0 - self.outlier_prob + self.outlier_prob * (1.0 - 1.0 / s) / np.log(s)
        c = y.sum() / (unit.factor(y, d) * y).sum() / shrink
        return BiasProfile(**{**asdict(self), "scale": float(c)})


@dataclass
class OracleSignalConfig:
    aux_strength: float = 1.5
    aux_noise: float = 1.0
    play_noise: float = 0.5
    rep_dim: int = 8
    rep_noise: float = 0.5
    common_dim: int = 16


def biased_oracle_first_stage(
    data: Impressions,
    profile: BiasProfile,
    seed: int = 0,
    signals: OracleSignalConfig | None = None,
    structure_seed: int = 0,
) -> FirstStageOutputs:
    """Fabricate first-stage outputs ``y_hat0 = factor(y, d) * y * noise`` with known bias.

    Noise is mean-one lognormal.  Auxiliary logits are noisy views of the
    auxiliary labels, tower representations embed the label along a fixed
    direction plus noise, the playtime logit is a noisy ``log1p(y)``, and the
    common representation is a fixed random projection of the features (it
    carries no duration information).

    ``seed`` drives per-row noise; ``structure_seed`` draws the fixed tower
    directions and feature projection, and must be shared by every split of
    one experiment so the signals mean the same thing in train and test.
    """
    sig = signals or OracleSignalConfig()
    rng = np.random.default_rng(seed)
    y, d = data.watch_time_s, data.duration_s
    n = len(data)
    s = profile.noise_sigma
    noise = np.exp(s * rng.standard_normal(n) - 0.5 * s * s) if s > 0 else np.ones(n)
    if profile.outlier_prob > 0:
        hit = rng.random(n) < profile.outlier_prob
        noise[hit] /= np.exp(rng.uniform(0.0, np.log(profile.outlier_scale), hit.sum()))
    y_hat0 = profile.factor(y, d) * y * noise
    labels = data.aux_labels
    M = labels.shape[1]
    aux = sig.aux_strength * (2.0 * labels - 1.0) + sig.aux_noise * rng.standard_normal((n, M))
    fixed = np.random.default_rng(structure_seed)
    directions = fixed.normal(0.0, 1.0, (M, sig.rep_dim))
    reps = np.tanh(labels[:, :, None] * directions[None] + sig.rep_noise * rng.standard_normal((n, M, sig.rep_dim)))
    proj = fixed.normal(0.0, 1.0 / np.sqrt(max(data.n_features, 1)), (data.n_features, sig.common_dim))
    common = np.tanh(data.features @ proj)
    play = np.log1p(y) + sig.play_noise * rng.standard_normal(n)
    return FirstStageOutputs(y_hat0, softplus_inverse(y_hat0), aux, play, reps, common)
