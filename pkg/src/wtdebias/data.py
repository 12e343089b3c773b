"""Impression logs: synthetic generation, CSV ingestion, splitting and duration bucketing.

Datasets are held column-wise in :class:`Impressions` (one numpy array per
field) because every downstream consumer works on whole batches.  Indexing
with an integer yields a single :class:`Impression` record.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

AUX_TASKS = ("completion", "effective_view", "long_view", "short_view", "negative_feedback")


class DataError(ValueError):
    pass


def _as_rows(a, n: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    # keep the column count of an empty 2-D input; reshape(0, -1) is ambiguous
    return a if a.ndim == 2 and len(a) == n else a.reshape(n, -1)


@dataclass(frozen=True)
class Impression:
    user_id: int
    item_id: int
    features: np.ndarray
    duration_s: float
    watch_time_s: float
    aux_labels: np.ndarray


@dataclass
class Impressions:
    """Columnar container for a set of logged impressions."""

    user_id: np.ndarray
    item_id: np.ndarray
    features: np.ndarray  # (n, n_features)
    duration_s: np.ndarray
    watch_time_s: np.ndarray
    aux_labels: np.ndarray  # (n, M) in AUX_TASKS order
    row_index: np.ndarray = None  # position in the original log, used for canonical ordering

    def __post_init__(self):
        self.user_id = np.asarray(self.user_id, dtype=np.int64)
        self.item_id = np.asarray(self.item_id, dtype=np.int64)
        n = len(self.user_id)
        self.features = _as_rows(self.features, n)
        self.duration_s = np.asarray(self.duration_s, dtype=np.float64)
        self.watch_time_s = np.asarray(self.watch_time_s, dtype=np.float64)
        self.aux_labels = _as_rows(self.aux_labels, n)
        if self.row_index is None:
            self.row_index = np.arange(n, dtype=np.int64)
        self.row_index = np.asarray(self.row_index, dtype=np.int64)
        for f in fields(self):
            if len(getattr(self, f.name)) != n:
                raise DataError(f"column {f.name} has length {len(getattr(self, f.name))}, expected {n}")

    def __len__(self) -> int:
        return len(self.user_id)

    def __getitem__(self, i: int) -> Impression:
        return Impression(
            int(self.user_id[i]),
            int(self.item_id[i]),
            self.features[i].copy(),
            float(self.duration_s[i]),
            float(self.watch_time_s[i]),
            self.aux_labels[i].copy(),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Impressions":
        idx = np.asarray(idx)
        return Impressions(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    @classmethod
    def from_records(cls, records: Iterable[Impression], n_features: int = 0, n_aux: int = len(AUX_TASKS)):
        records = list(records)
        if not records:
            return cls.empty(n_features, n_aux)
        return cls(
            user_id=[r.user_id for r in records],
            item_id=[r.item_id for r in records],
            features=np.stack([np.asarray(r.features, dtype=np.float64) for r in records]),
            duration_s=[r.duration_s for r in records],
            watch_time_s=[r.watch_time_s for r in records],
            aux_labels=np.stack([np.asarray(r.aux_labels, dtype=np.float64) for r in records]),
        )

    @classmethod
    def empty(cls, n_features: int = 0, n_aux: int = len(AUX_TASKS)) -> "Impressions":
        return cls([], [], np.zeros((0, n_features)), [], [], np.zeros((0, n_aux)))

    def canonical_order(self) -> np.ndarray:
        """Permutation sorting by (user_id, item_id, row_index)."""
        return np.lexsort((self.row_index, self.item_id, self.user_id))


# -- synthetic generator ----------------------------------------------------------
@dataclass
class GeneratorConfig:
    n_users: int = 1000
    n_items: int = 2000
    n_features: int = 8
    min_duration: float = 5.0
    max_duration: float = 300.0
    # duration mixture: (weight, low, high) components, log-uniform within each
    duration_mixture: tuple = ((0.5, 5.0, 30.0), (0.3, 30.0, 90.0), (0.2, 90.0, 300.0))
    user_sd: float = 0.5
    item_sd: float = 0.5
    impression_sd: float = 0.35
    engagement_scale: float = 0.7
    base_fraction: float = 0.45  # median watch fraction at zero engagement on a 5 s video
    fraction_decay: float = 0.35  # how fast the typical watch fraction falls with duration
    sigma_short: float = 0.55
    sigma_long: float = 1.1
    skip_prob: float = 0.04  # immediate swipes recorded with y = 0
    feature_noise: float = 0.6
    long_view_s: float = 18.0
    short_view_s: float = 3.0
    effective_view_s: float = 7.0
    completion_frac: float = 0.95

    def validate(self) -> None:
        if self.n_users < 1 or self.n_items < 1 or self.n_features < 3:
            raise DataError("n_users and n_items must be >= 1 and n_features >= 3")
        if not 0 < self.min_duration < self.max_duration:
            raise DataError("need 0 < min_duration < max_duration")
        if not 0.0 <= self.skip_prob < 1.0:
            raise DataError("skip_prob must lie in [0, 1)")
        if min(self.sigma_short, self.sigma_long, self.feature_noise) < 0:
            raise DataError("noise scales must be non-negative")
        if not 0 < self.completion_frac <= 1:
            raise DataError("completion_frac must lie in (0, 1]")
        for w, lo, hi in self.duration_mixture:
            if w < 0 or not (self.min_duration <= lo < hi <= self.max_duration):
                raise DataError(f"bad duration mixture component {(w, lo, hi)}")


def aux_labels_from_watch(y: np.ndarray, d: np.ndarray, cfg: GeneratorConfig, negative: np.ndarray) -> np.ndarray:
    """Threshold labels in AUX_TASKS order; ``negative`` is the sampled negative-feedback flag."""
    completion = y >= cfg.completion_frac * d
    effective = y >= np.minimum(d, cfg.effective_view_s)
    long_view = y >= np.minimum(d, cfg.long_view_s)
    short_view = y < cfg.short_view_s
    return np.column_stack([completion, effective, long_view, short_view, negative]).astype(np.float64)


def generate_synthetic(n: int, seed: int = 0, config: GeneratorConfig | None = None) -> Impressions:
    """Long-tailed watch-time log with per-user and per-item engagement effects.

    Watch time is ``min(d, LogNormal(mu(e, d), sigma(d)))`` where ``e`` is the latent
    engagement of the (user, item) pair.  Completions pile up at the item
    durations, which together with the duration mixture makes the marginal of
    ``y`` right-skewed and multi-peaked.
    """
    cfg = config or GeneratorConfig()
    cfg.validate()
    if n < 0:
        raise DataError("n must be non-negative")
    rng = np.random.default_rng(seed)
    if n == 0:
        return Impressions.empty(cfg.n_features)

    user_eff = rng.normal(0.0, cfg.user_sd, cfg.n_users)
    item_eff = rng.normal(0.0, cfg.item_sd, cfg.n_items)
    weights = np.array([c[0] for c in cfg.duration_mixture], dtype=np.float64)
    comp = rng.choice(len(weights), size=cfg.n_items, p=weights / weights.sum())
    lo = np.log([cfg.duration_mixture[c][1] for c in comp])
    hi = np.log([cfg.duration_mixture[c][2] for c in comp])
    item_duration = np.round(np.exp(rng.uniform(lo, hi)), 1)

    # users and items drawn with mild popularity skew
    user = np.minimum((rng.pareto(2.0, n) * cfg.n_users / 4).astype(np.int64), cfg.n_users - 1)
    user = rng.permutation(cfg.n_users)[user]
    item = np.minimum((rng.pareto(1.5, n) * cfg.n_items / 6).astype(np.int64), cfg.n_items - 1)
    item = rng.permutation(cfg.n_items)[item]
    d = item_duration[item]

    e = user_eff[user] + item_eff[item] + rng.normal(0.0, cfg.impression_sd, n)
    log_ratio = np.log(d / cfg.min_duration)
    mu = np.log(d) + np.log(cfg.base_fraction) - cfg.fraction_decay * log_ratio + cfg.engagement_scale * e
    t = log_ratio / np.log(cfg.max_duration / cfg.min_duration)
    sigma = cfg.sigma_short + (cfg.sigma_long - cfg.sigma_short) * t
    y = np.minimum(d, np.exp(mu + sigma * rng.standard_normal(n)))
    y[rng.random(n) < cfg.skip_prob] = 0.0
    y = np.round(y, 3)

    negative = rng.random(n) < 1.0 / (1.0 + np.exp(3.0 + 1.5 * e))
    aux = aux_labels_from_watch(y, d, cfg, negative)

    # noisy views of the latent effects; the last columns are pure noise
    nf = cfg.n_features
    feats = rng.normal(0.0, cfg.feature_noise, (n, nf))
    sources = [user_eff[user], item_eff[item], e]
    for j in range(nf - 2):
        feats[:, j] += sources[j % 3]
    return Impressions(user, item, feats, d, y, aux)


# -- CSV ingestion ----------------------------------------------------------------
@dataclass
class CsvSchema:
    """Maps logical fields to CSV column names with unit multipliers to seconds."""

    user_id: str = "user_id"
    item_id: str = "item_id"
    duration_s: str = "duration_s"
    watch_time_s: str = "watch_time_s"
    duration_scale: float = 1.0
    watch_time_scale: float = 1.0
    feature_columns: Sequence[str] = ()
    aux_columns: Sequence[str] = ()

    @classmethod
    def kuairec(cls) -> "CsvSchema":
        # KuaiRec small_matrix.csv stores play/video duration in milliseconds
        return cls(
            user_id="user_id",
            item_id="video_id",
            duration_s="video_duration",
            watch_time_s="play_duration",
            duration_scale=1e-3,
            watch_time_scale=1e-3,
        )


@dataclass
class IngestReport:
    accepted: int = 0
    rejected: int = 0
    reasons: dict[str, int] = field(default_factory=dict)

    def reject(self, reason: str) -> None:
        self.rejected += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1


def ingest_csv(path, schema: CsvSchema | None = None) -> tuple[Impressions, IngestReport]:
    schema = schema or CsvSchema()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such log file: {path}")
    report = IngestReport()
    rows: dict[str, list] = {k: [] for k in ("user", "item", "feat", "dur", "watch", "aux", "row")}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = [schema.user_id, schema.item_id, schema.duration_s, schema.watch_time_s]
        missing = [c for c in [*required, *schema.feature_columns, *schema.aux_columns] if c not in header]
        if missing:
            raise DataError(f"{path}: missing required columns {missing}")
        for i, row in enumerate(reader):
            try:
                user = int(float(row[schema.user_id]))
                item = int(float(row[schema.item_id]))
                dur = float(row[schema.duration_s]) * schema.duration_scale
                watch = float(row[schema.watch_time_s]) * schema.watch_time_scale
                feats = [float(row[c]) for c in schema.feature_columns]
                aux = [float(row[c]) for c in schema.aux_columns]
            except (TypeError, ValueError):
                report.reject("non_numeric")
                continue
            if not np.isfinite([dur, watch, *feats, *aux]).all():
                report.reject("non_finite")
            elif dur <= 0:
                report.reject("non_positive_duration")
            elif watch < 0:
                report.reject("negative_watch_time")
            else:
                rows["user"].append(user)
                rows["item"].append(item)
                rows["feat"].append(feats)
                rows["dur"].append(dur)
                rows["watch"].append(watch)
                rows["aux"].append(aux)
                rows["row"].append(i)
    report.accepted = len(rows["user"])
    if report.rejected:
        log.info("ingest %s: dropped %d rows %s", path, report.rejected, report.reasons)
    n = report.accepted
    data = Impressions(
        rows["user"],
        rows["item"],
        np.array(rows["feat"], dtype=np.float64).reshape(n, len(schema.feature_columns)),
        rows["dur"],
        rows["watch"],
        np.array(rows["aux"], dtype=np.float64).reshape(n, len(schema.aux_columns)),
        rows["row"],
    )
    return data, report


def write_csv(data: Impressions, path) -> None:
    """Write in the layout :func:`read_dataset_csv` reads back (features f0.., aux labels by task name)."""
    path = Path(path)
    nf, na = data.features.shape[1], data.aux_labels.shape[1]
    aux_names = list(AUX_TASKS[:na]) + [f"aux{j}" for j in range(len(AUX_TASKS), na)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_index", "user_id", "item_id", "duration_s", "watch_time_s",
                    *[f"f{j}" for j in range(nf)], *aux_names])
        for i in range(len(data)):
            w.writerow([
                int(data.row_index[i]), int(data.user_id[i]), int(data.item_id[i]),
                repr(float(data.duration_s[i])), repr(float(data.watch_time_s[i])),
                *[repr(float(v)) for v in data.features[i]],
                *[repr(float(v)) for v in data.aux_labels[i]],
            ])


def read_dataset_csv(path) -> Impressions:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh))
    feats = [c for c in header if c.startswith("f") and c[1:].isdigit()]
    aux = [c for c in header if c in AUX_TASKS or (c.startswith("aux") and c[3:].isdigit())]
    data, report = ingest_csv(path, CsvSchema(feature_columns=feats, aux_columns=aux))
    if report.rejected:
        raise DataError(f"{path}: {report.rejected} invalid rows in a written dataset")
    if "row_index" in header:
        with Path(path).open(newline="", encoding="utf-8") as fh:
            data.row_index = np.array([int(r["row_index"]) for r in csv.DictReader(fh)], dtype=np.int64)
    return data


# -- splitting ----------------------------------------------------------------------
@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or min(self.fractions) < 0 or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise DataError(f"split fractions must be three non-negative numbers summing to 1, got {self.fractions}")


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """Largest-remainder rounding of ``n * fractions``; ties favour train."""
    exact = [n * f for f in fractions]
    sizes = [int(np.floor(x + 1e-9)) for x in exact]
    remainders = [x - s for x, s in zip(exact, sizes)]
    for i in sorted(range(3), key=lambda i: (-round(remainders[i], 9), i))[: n - sum(sizes)]:
        sizes[i] += 1
    return tuple(sizes)


def split(data: Impressions, spec: SplitSpec = SplitSpec()) -> tuple[Impressions, Impressions, Impressions]:
    """Seeded random partition, independent of the input row order."""
    if len(data) == 0:
        raise DataError("cannot split an empty dataset")
    order = data.canonical_order()
    perm = order[np.random.default_rng(spec.seed).permutation(len(data))]
    n_train, n_val, _ = split_sizes(len(data), spec.fractions)
    parts = np.split(perm, [n_train, n_train + n_val])
    return tuple(data.subset(np.sort(p)) for p in parts)


# -- duration bucketing ----------------------------------------------------------
@dataclass
class Bucketing:
    """Duration-group function: group g covers [boundaries[g-1], boundaries[g])."""

    boundaries: np.ndarray
    mode: str = "fixed"

    def __post_init__(self):
        self.boundaries = np.asarray(self.boundaries, dtype=np.float64).reshape(-1)
        if np.any(np.diff(self.boundaries) <= 0):
            raise DataError(f"bucket boundaries must be strictly increasing: {self.boundaries}")
        if self.mode not in ("fixed", "equal_frequency"):
            raise DataError(f"unknown bucketing mode {self.mode!r}")

    @property
    def K(self) -> int:
        return len(self.boundaries) + 1

    def __call__(self, duration) -> np.ndarray:
        # ties at a boundary go to the higher group
        return np.searchsorted(self.boundaries, np.asarray(duration, dtype=np.float64), side="right")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "boundaries": [float(b) for b in self.boundaries]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Bucketing":
        return cls(d["boundaries"], d.get("mode", "fixed"))


def fit_bucketing(durations, K: int, mode: str = "equal_frequency", boundaries: Sequence[float] = ()) -> Bucketing:
    if mode == "fixed":
        return Bucketing(list(boundaries), "fixed")
    if mode != "equal_frequency":
        raise DataError(f"unknown bucketing mode {mode!r}")
    if K < 1:
        raise DataError("K must be >= 1")
    durations = np.asarray(durations, dtype=np.float64)
    if len(np.unique(durations)) < K:
        raise DataError(f"K={K} exceeds the number of distinct durations ({len(np.unique(durations))})")
    qs = np.quantile(durations, np.arange(1, K) / K)
    if np.any(np.diff(qs) <= 0):
        raise DataError(f"duplicate durations collapse quantile boundaries {qs}; lower K")
    return Bucketing(qs, "equal_frequency")
