"""Command-line entry point: ``python -m wtdebias <command> --config run.yaml``.

Commands communicate only through files.  Each writes one run directory
under the output root (``--out``, else ``$WTDEBIAS_OUT``, else the config's
``out_dir``) holding the resolved config, the seed, its artifacts and, on
failure, ``error.json``.  An existing directory is never reused; a timestamp
suffix is added instead.  Downstream commands read the newest matching
upstream directory unless one is given explicitly.

Exit codes: 0 success, 1 other failure, 2 config error, 3 data error,
4 training divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import traceback
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .benchmarks import fabricate_first_stage
from .config import ConfigError, RunConfig
from .correction import CorrectionConfig, DadfModel, make_batch
from .data import (
    CsvSchema, DataError, Impressions, SplitSpec, aux_labels_from_watch, fit_bucketing, generate_synthetic,
    ingest_csv, read_dataset_csv, split, write_csv,
)
from .evaluation import (
    bucket_sensitivity_sweep, evaluate, factor_distribution_report, run_tag, write_json, write_report, write_table,
)
from .first_stage import FirstStageModel, FirstStageOutputs, TrainingDivergedError as FirstStageDiverged
from .first_stage import freeze_and_emit, train_vr, train_wlr
from .metrics import mae, xauc
from .theory import check_long_tail_inheritance, check_oracle_risk
from .training import TrainingDivergedError, make_label, train_variant
from .transform import boxcox, skewness

log = logging.getLogger("wtdebias")

ENV_OUT = "WTDEBIAS_OUT"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4
SPLITS = ("train", "val", "test")


class MissingArtifactError(DataError):
    pass


class CheckFailed(RuntimeError):
    pass


# -- run directories ----------------------------------------------------------------
class Context:
    """Output root plus the directory of the command currently running."""

    def __init__(self, root):
        self.root = Path(root)
        self.run_dir: Path | None = None

    def new_run(self, name: str, cfg: RunConfig) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / name
        if path.exists():
            stamp = time.strftime("%Y%m%dT%H%M%S")
            path = self.root / f"{name}_{stamp}"
            k = 1
            while path.exists():
                path = self.root / f"{name}_{stamp}_{k}"
                k += 1
        path.mkdir(parents=True)
        self.run_dir = path
        cfgmod.dump_yaml(cfg, path / "resolved_config.yaml")
        (path / "seed.txt").write_text(f"{cfg.seed}\n", encoding="utf-8")
        return path

    def rel(self, path) -> str:
        """``path`` relative to the output root when inside it, so identical runs write identical files."""
        path = Path(path)
        try:
            return str(path.resolve().relative_to(self.root.resolve()))
        except ValueError:
            return str(path)

    def upstream(self, name: str, expected: tuple[str, ...], explicit=None) -> Path:
        """Newest ``name`` or ``name_<timestamp>`` directory under the root, or the explicit one."""
        if explicit is not None:
            cands = [Path(explicit)]
        else:
            cands = sorted(self.root.glob(f"{name}_*"), reverse=True) + [self.root / name]
        for c in cands:
            if all((c / f).exists() for f in expected):
                return c
        want = Path(explicit) if explicit is not None else self.root / name
        raise MissingArtifactError(f"missing upstream artifact: expected {want / expected[0]}")


# -- stages -------------------------------------------------------------------------
def _load_data(cfg: RunConfig) -> tuple[Impressions, dict]:
    dc = cfg.data
    if dc.source == "synthetic":
        return generate_synthetic(dc.n, cfg.seed, dc.generator), {"source": "synthetic"}
    schema = CsvSchema.kuairec() if dc.schema_preset == "kuairec" else dc.schema
    data, report = ingest_csv(dc.csv_path, schema)
    if data.aux_labels.shape[1] == 0:
        # logs without engagement labels: derive them from watch time (no negative feedback)
        data.aux_labels = aux_labels_from_watch(data.watch_time_s, data.duration_s, dc.generator,
                                                np.zeros(len(data), dtype=bool))
    return data, {"source": "csv", "path": str(dc.csv_path), "ingest": asdict(report)}


def cmd_gen_data(cfg: RunConfig, ctx: Context) -> Path:
    out = ctx.new_run("data", cfg)
    data, info = _load_data(cfg)
    parts = split(data, SplitSpec(tuple(cfg.split.fractions), cfg.seed))
    for name, part in zip(SPLITS, parts):
        write_csv(part, out / f"{name}.csv")
    y = data.watch_time_s
    manifest = {
        "seed": cfg.seed,
        **info,
        "rows": {name: len(p) for name, p in zip(SPLITS, parts)},
        "watch_time": {
            "mean": float(y.mean()),
            "skewness": skewness(y),
            "p50": float(np.median(y)),
            "p99": float(np.percentile(y, 99)),
            "zero_fraction": float(np.mean(y == 0)),
        },
        "duration": {"mean": float(data.duration_s.mean()), "min": float(data.duration_s.min()),
                     "max": float(data.duration_s.max())},
    }
    write_json(manifest, out / "manifest.json")
    log.info("wrote %s rows to %s", manifest["rows"], out)
    return out


def _read_splits(data_dir: Path) -> list[Impressions]:
    return [read_dataset_csv(data_dir / f"{s}.csv") for s in SPLITS]


def cmd_train_first_stage(cfg: RunConfig, ctx: Context, data_dir=None) -> Path:
    data_dir = ctx.upstream("data", tuple(f"{s}.csv" for s in SPLITS), data_dir)
    parts = _read_splits(data_dir)
    out = ctx.new_run("first_stage", cfg)
    fs = cfg.first_stage
    info = {"backbone": fs.backbone, "data_dir": ctx.rel(data_dir)}
    if fs.backbone == "oracle":
        outs, profile = fabricate_first_stage(fs.oracle_profile, parts[0], tuple(parts), cfg.seed, fs.signals)
        info["profile"] = fs.oracle_profile
        write_json(asdict(profile), out / "bias_profile.json")
    else:
        hyper = replace(fs.hyper, seed=cfg.seed)
        model = (train_vr if fs.backbone == "vr" else train_wlr)(parts[0], parts[1], hyper)
        model.save(out / "first_stage_model.json")
        outs = [freeze_and_emit(model, p) for p in parts]
    for name, part, o in zip(SPLITS, parts, outs):
        o.to_csv(out / f"outputs_{name}.csv")
        info[f"{name}_mae"] = mae(part.watch_time_s, o.y_hat0)
        info[f"{name}_ratio"] = float(o.y_hat0.mean() / max(part.watch_time_s.mean(), 1e-12))
    write_json(info, out / "summary.json")
    return out


def _read_outputs(fs_dir: Path) -> list[FirstStageOutputs]:
    return [FirstStageOutputs.from_csv(fs_dir / f"outputs_{s}.csv") for s in SPLITS]


def make_bucketing(cfg: RunConfig, train: Impressions, K: int | None = None):
    b = cfg.bucketing
    if K is not None or b.mode == "equal_frequency":
        return fit_bucketing(train.duration_s, K if K is not None else b.K)
    if b.mode == "fixed":
        return fit_bucketing(train.duration_s, 0, mode="fixed", boundaries=b.boundaries)
    cuts = np.quantile(train.duration_s, b.quantiles)
    return fit_bucketing(train.duration_s, 0, mode="fixed", boundaries=[float(c) for c in cuts])


def _fit(cfg: RunConfig, parts, outs, bucketing, variant: str, log_path=None):
    batches = [make_batch(p, o, bucketing) for p, o in zip(parts, outs)]
    hyper = replace(cfg.dadf.train, seed=cfg.seed, log_path=str(log_path) if log_path else None)
    net = replace(cfg.dadf.net, K=bucketing.K)
    res = train_variant(variant, batches[0], parts[0].watch_time_s, batches[1], parts[1].watch_time_s,
                        bucketing, cfg.dadf.loss, hyper, net)
    return res, batches


def cmd_train_dadf(cfg: RunConfig, ctx: Context, data_dir=None, fs_dir=None) -> Path:
    data_dir = ctx.upstream("data", tuple(f"{s}.csv" for s in SPLITS), data_dir)
    fs_dir = ctx.upstream("first_stage", tuple(f"outputs_{s}.csv" for s in SPLITS), fs_dir)
    parts, outs = _read_splits(data_dir), _read_outputs(fs_dir)
    bucketing = make_bucketing(cfg, parts[0])
    out = ctx.new_run(f"dadf_{cfg.variant}", cfg)
    res, batches = _fit(cfg, parts, outs, bucketing, cfg.variant, out / "metrics.jsonl")
    res.model.save(out / "dadf_model.json")
    _, y_val = res.model.predict_corrected(batches[1])
    write_json({
        "variant": cfg.variant, "K": bucketing.K, "seed": cfg.seed,
        "data_dir": ctx.rel(data_dir), "first_stage_dir": ctx.rel(fs_dir),
        "best_epoch": res.best_epoch, "best_val_mae": res.best_val_mae,
        "val_xauc": xauc(parts[1].watch_time_s, y_val, cfg.eval.max_pairs, cfg.seed),
        "lambdas": res.model.lambdas.data.tolist(),
        "domain_violations": int(sum(h["domain_violations"] for h in res.history)),
    }, out / "summary.json")
    write_json(res.history, out / "history.json")
    return out


def cmd_evaluate(cfg: RunConfig, ctx: Context, data_dir=None, fs_dir=None, model_dir=None) -> Path:
    data_dir = ctx.upstream("data", ("test.csv",), data_dir)
    fs_dir = ctx.upstream("first_stage", ("outputs_test.csv",), fs_dir)
    model_dir = ctx.upstream(f"dadf_{cfg.variant}", ("dadf_model.json",), model_dir)
    test = read_dataset_csv(data_dir / "test.csv")
    out_test = FirstStageOutputs.from_csv(fs_dir / "outputs_test.csv")
    model = DadfModel.load(model_dir / "dadf_model.json")
    if model.bucketing is None:
        raise MissingArtifactError(f"{model_dir / 'dadf_model.json'} carries no bucketing")
    out = ctx.new_run(f"eval_{cfg.variant}", cfg)
    batch = make_batch(test, out_test, model.bucketing)
    _, y_hat = model.predict_corrected(batch)
    groups = model.model_groups(batch.groups)
    lam = model.lambdas.data
    b = make_label(test.watch_time_s, out_test.y_hat0, model.cfg.eps)
    z = boxcox(b, lam[groups], model.cfg.eps, model.cfg.zero_branch_tol)
    report = evaluate(
        test, y_hat, out_test.y_hat0, model.bucketing, lam, cfg.eval.watch_edges, cfg.eval.tail_fractions,
        cfg.eval.max_pairs, cfg.seed, factor_distribution_report(b, z, groups, lam, model.K), cfg.variant,
    )
    tag = run_tag(out.name, cfg.variant, model.K, cfg.seed)
    write_report(report, out, tag)
    write_json({"mae": report.mae, "xauc": report.xauc, "base_mae": report.base_mae,
                "base_xauc": report.base_xauc, "model_dir": ctx.rel(model_dir)}, out / "metrics.json")
    return out


def cmd_sweep_k(cfg: RunConfig, ctx: Context, data_dir=None, fs_dir=None) -> Path:
    data_dir = ctx.upstream("data", tuple(f"{s}.csv" for s in SPLITS), data_dir)
    fs_dir = ctx.upstream("first_stage", tuple(f"outputs_{s}.csv" for s in SPLITS), fs_dir)
    parts, outs = _read_splits(data_dir), _read_outputs(fs_dir)
    out = ctx.new_run("sweep_k", cfg)
    violations = {}

    def runner(K: int):
        bk = make_bucketing(cfg, parts[0], K)
        res, batches = _fit(cfg, parts, outs, bk, "full", out / f"metrics_K{K}.jsonl")
        violations[K] = int(sum(h["domain_violations"] for h in res.history))
        _, y_hat = res.model.predict_corrected(batches[2])
        res.model.save(out / f"dadf_model_K{K}.json")
        y = parts[2].watch_time_s
        return mae(y, y_hat), xauc(y, y_hat, cfg.eval.max_pairs, cfg.seed)

    summary = bucket_sensitivity_sweep(cfg.eval.sweep_K, runner)
    for row in summary["runs"]:
        row["domain_violations"] = violations[row["K"]]
    write_json(summary, out / "sweep.json")
    write_table(summary["runs"], out / "sweep.csv")
    return out


def cmd_check_appendix(cfg: RunConfig, ctx: Context) -> Path:
    out = ctx.new_run("appendix", cfg)
    a = cfg.appendix
    tail = check_long_tail_inheritance(n=a.tail_n, a_values=a.tail_a, seed=cfg.seed)
    risk = check_oracle_risk(a.risk_probs, a.risk_means, a.risk_vars, a.risk_n, cfg.seed)
    write_json(tail.to_dict(), out / "long_tail_inheritance.json")
    write_json(risk.to_dict(), out / "oracle_risk.json")
    if not (tail.passed and risk.passed):
        raise CheckFailed(f"appendix checks: long_tail={tail.passed} oracle_risk={risk.passed}")
    return out


def run_pipeline(cfg: RunConfig, root) -> Path:
    """gen-data, first stage, DADF training and evaluation inside one fresh run directory."""
    outer = Context(root)
    top = outer.new_run("pipeline", cfg)
    ctx = Context(top)
    stages = {}
    stages["data"] = cmd_gen_data(cfg, ctx)
    stages["first_stage"] = cmd_train_first_stage(cfg, ctx, stages["data"])
    stages["dadf"] = cmd_train_dadf(cfg, ctx, stages["data"], stages["first_stage"])
    stages["eval"] = cmd_evaluate(cfg, ctx, stages["data"], stages["first_stage"], stages["dadf"])
    write_json({k: v.name for k, v in stages.items()}, top / "stages.json")
    return top


# -- argument handling ----------------------------------------------------------------
COMMANDS = ("gen-data", "train-first-stage", "train-dadf", "evaluate", "sweep-k", "check-appendix", "pipeline")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wtdebias", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML or JSON run config (defaults apply when omitted)")
    p.add_argument("--out", help=f"output root (overrides ${ENV_OUT} and the config)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--variant", help="overrides the config variant")
    p.add_argument("--data-dir", help="explicit upstream data directory")
    p.add_argument("--first-stage-dir", help="explicit upstream first-stage directory")
    p.add_argument("--model-dir", help="explicit upstream DADF model directory")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def _write_error(path: Path, exc: BaseException, code: int) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code,
               "traceback": traceback.format_exception_only(type(exc), exc)}
        (path / "error.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")
    except OSError:
        pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    ctx = None
    try:
        raw_cfg = cfgmod.load(args.config) if args.config else cfgmod.from_dict({})
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.variant is not None:
            overrides["variant"] = args.variant
        cfg = replace(raw_cfg, **overrides)
        cfg.validate()
        root = args.out or os.environ.get(ENV_OUT) or cfg.out_dir
        ctx = Context(root)
        if args.command == "gen-data":
            cmd_gen_data(cfg, ctx)
        elif args.command == "train-first-stage":
            cmd_train_first_stage(cfg, ctx, args.data_dir)
        elif args.command == "train-dadf":
            cmd_train_dadf(cfg, ctx, args.data_dir, args.first_stage_dir)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, ctx, args.data_dir, args.first_stage_dir, args.model_dir)
        elif args.command == "sweep-k":
            cmd_sweep_k(cfg, ctx, args.data_dir, args.first_stage_dir)
        elif args.command == "check-appendix":
            cmd_check_appendix(cfg, ctx)
        else:
            ctx.run_dir = run_pipeline(cfg, root)
        if ctx.run_dir is not None:
            print(ctx.run_dir)
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 -- every failure still leaves error.json
        err = exc
        if isinstance(exc, ConfigError):
            code = EXIT_CONFIG
        elif isinstance(exc, (DataError, FileNotFoundError)):
            code = EXIT_DATA
        elif isinstance(exc, (TrainingDivergedError, FirstStageDiverged)):
            code = EXIT_DIVERGED
        else:
            code = EXIT_FAIL
    log.error("%s: %s", type(err).__name__, err)
    target = (ctx.run_dir if ctx and ctx.run_dir else None) or Path(args.out or os.environ.get(ENV_OUT) or ".")
    _write_error(target, err, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
