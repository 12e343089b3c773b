"""Run configuration: nested dataclasses read from YAML (or JSON) with strict key checking.

Every section has documented defaults; any key not declared here is an error,
so a typo can never silently fall back to a default.  :func:`resolved` gives
the fully expanded config that each run writes next to its artifacts.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .correction import CorrectionConfig
from .data import CsvSchema, GeneratorConfig
from .first_stage import FirstStageHyper, OracleSignalConfig
from .training import VARIANTS, LossWeights, TrainHyper


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    source: str = "synthetic"  # synthetic | csv
    n: int = 50_000
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    csv_path: str | None = None
    schema_preset: str | None = None  # "kuairec" or None
    schema: CsvSchema = field(default_factory=CsvSchema)


@dataclass
class SplitSection:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass
class BucketingSection:
    mode: str = "equal_frequency"  # equal_frequency | fixed | quantiles
    K: int = 4
    boundaries: tuple[float, ...] = ()  # fixed mode, seconds
    quantiles: tuple[float, ...] = ()  # quantiles mode, cut points as train-duration quantiles


@dataclass
class FirstStageSection:
    backbone: str = "oracle"  # vr | wlr | oracle
    hyper: FirstStageHyper = field(default_factory=FirstStageHyper)
    oracle_profile: str = "pseudo_balance"  # pseudo_balance | long_duration_bias
    signals: OracleSignalConfig = field(default_factory=OracleSignalConfig)


@dataclass
class DadfSection:
    loss: LossWeights = field(default_factory=LossWeights)
    net: CorrectionConfig = field(default_factory=CorrectionConfig)
    train: TrainHyper = field(default_factory=TrainHyper)


@dataclass
class EvalSection:
    watch_edges: tuple[float, ...] = tuple(float(v) for v in range(20, 201, 20))
    tail_fractions: tuple[float, ...] = (0.2, 0.1)
    max_pairs: int = 5_000_000
    sweep_K: tuple[int, ...] = (2, 3, 4, 6, 8)


@dataclass
class AppendixSection:
    tail_n: int = 1_000_000
    tail_a: tuple[float, ...] = (1.0, 5.0)
    risk_probs: tuple[float, ...] = (0.5, 0.5)
    risk_means: tuple[float, ...] = (0.0, 2.0)
    risk_vars: tuple[float, ...] = (1.0, 1.0)
    risk_n: int = 100_000


@dataclass
class RunConfig:
    seed: int = 0
    variant: str = "full"
    out_dir: str = "runs"
    data: DataSection = field(default_factory=DataSection)
    split: SplitSection = field(default_factory=SplitSection)
    bucketing: BucketingSection = field(default_factory=BucketingSection)
    first_stage: FirstStageSection = field(default_factory=FirstStageSection)
    dadf: DadfSection = field(default_factory=DadfSection)
    eval: EvalSection = field(default_factory=EvalSection)
    appendix: AppendixSection = field(default_factory=AppendixSection)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.data.source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be synthetic or csv, got {self.data.source!r}")
        if self.data.source == "csv" and not self.data.csv_path:
            raise ConfigError("data.csv_path is required when data.source is csv")
        if self.data.schema_preset not in (None, "kuairec"):
            raise ConfigError(f"unknown data.schema_preset {self.data.schema_preset!r}")
        if self.bucketing.mode not in ("equal_frequency", "fixed", "quantiles"):
            raise ConfigError(f"unknown bucketing.mode {self.bucketing.mode!r}")
        if self.first_stage.backbone not in ("vr", "wlr", "oracle"):
            raise ConfigError(f"first_stage.backbone must be vr, wlr or oracle, got {self.first_stage.backbone!r}")
        if self.first_stage.oracle_profile not in ("pseudo_balance", "long_duration_bias"):
            raise ConfigError(f"unknown first_stage.oracle_profile {self.first_stage.oracle_profile!r}")
        if self.data.n < 10:
            raise ConfigError("data.n must be at least 10")


def _deep_tuple(v):
    return tuple(_deep_tuple(x) for x in v) if isinstance(v, (list, tuple)) else v


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {unknown}; allowed: {sorted(known)}")
    kwargs = {}
    for name, value in raw.items():
        hint = hints[name]
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, path)
        elif isinstance(value, list):
            kwargs[name] = _deep_tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def from_dict(raw: dict | None) -> RunConfig:
    cfg = _build(RunConfig, raw or {}, "")
    cfg.validate()
    return cfg


def load(path) -> RunConfig:
    """Read a ``.yaml``/``.yml``/``.json`` file into a validated :class:`RunConfig`."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return from_dict(raw)


def resolved(cfg: RunConfig) -> dict:
    return json.loads(json.dumps(asdict(cfg), default=list))


def dump_yaml(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(resolved(cfg), sort_keys=True), encoding="utf-8")
